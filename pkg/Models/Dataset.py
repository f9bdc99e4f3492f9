
import numpy as np
import trimesh
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from Models.Gripper import Grasp, grasps_from_matrices
from Models.Pose import Pose


class GraspProvenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_surface_points: int
    n_rotations: int
    mu: float
    clearance: float
    standoff: float = 0.01
    seed: int = 0


class GraspSet(BaseModel):
    """Valid grasps of one object, stored as (N, 4, 4) object-frame matrices."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    object_id: str
    poses: np.ndarray
    provenance: GraspProvenance

    @field_validator("poses", mode="before")
    @classmethod
    def _as_matrices(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1, 4, 4)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def grasps(self) -> list[Grasp]:
        return grasps_from_matrices(self.poses, frame="object")

    @property
    def translations(self) -> np.ndarray:
        return self.poses[:, :3, 3]


class SgdfSamples(BaseModel):
    """Struct-of-arrays SGDF training records of one object."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray = Field(description="(N, 3) query points, object frame")
    s: np.ndarray = Field(description="(N,) signed distances")
    delta_t: np.ndarray = Field(description="(N, 3) nearest grasp translation minus x")
    rotation: np.ndarray = Field(description="(N, 3, 3) nearest grasp rotation, object frame")

    @model_validator(mode="after")
    def _lengths_match(self):
        n = len(self.x)
        if not (len(self.s) == len(self.delta_t) == len(self.rotation) == n):
            raise ValueError("sample arrays differ in length")
        return self

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, index: np.ndarray) -> "SgdfSamples":
        return SgdfSamples(x=self.x[index], s=self.s[index], delta_t=self.delta_t[index], rotation=self.rotation[index])


class ObjectRecord(BaseModel):
    """A library object: canonical mesh centered on its bounding box."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    object_id: str
    mesh: trimesh.Trimesh
    footprint_radius: float = Field(gt=0)
    base_offset: float = Field(description="height of the canonical origin above the support plane")
    source: str = "primitive"


class PlacedObject(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    object_id: str
    pose: Pose = Field(description="object canonical frame expressed in the world frame")
    footprint_radius: float


class SceneRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scene_id: str
    objects: list[PlacedObject]
    workspace: tuple[float, float, float, float] = Field(
        default=(-0.15, 0.15, -0.15, 0.15), description="x_min, x_max, y_min, y_max on the table"
    )
    table_z: float = 0.0
    seed: int = 0

    def without(self, index: int) -> "SceneRecord":
        objects = [o for i, o in enumerate(self.objects) if i != index]
        return self.model_copy(update={"objects": objects})


class ImageLabels(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    heatmap: np.ndarray = Field(description="(H, W) objectness in [0, 1]")
    pose_map: np.ndarray = Field(description="(H, W, 12) row-major [R|t], camera frame")
    code_map: np.ndarray = Field(description="(H, W, D) latent codes")
    instance_masks: np.ndarray = Field(description="(H, W) object index or -1")
    visible: list[int] = Field(default_factory=list)
    centers: list[tuple[int, int]] = Field(default_factory=list, description="(u, v) peak pixel per visible object")


class ManifestEntry(BaseModel):
    object_id: str
    mesh_path: str
    grasp_path: str
    samples_path: str
    n_candidates: int
    n_valid_grasps: int
    n_samples: int
    provenance: GraspProvenance


class DatasetManifest(BaseModel):
    format: str = "graspscope-dataset"
    version: int = 1
    seed: int
    objects: list[ManifestEntry]
