from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from Models.Geometry import CameraIntrinsics, PointCloud
from Models.Gripper import Grasp
from Models.Pose import Pose


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    resolution: int = Field(default=64, ge=8)
    lower: tuple[float, float, float] = (-0.075, -0.075, -0.075)
    upper: tuple[float, float, float] = (0.075, 0.075, 0.075)
    epsilon: Optional[float] = Field(default=None, ge=0, description="iso band; default half the grid spacing")

    @model_validator(mode="after")
    def _non_degenerate(self):
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("grid bounds are degenerate")
        return self

    @property
    def spacings(self) -> np.ndarray:
        """Per-axis step between neighbouring grid points."""
        return (np.asarray(self.upper) - np.asarray(self.lower)) / (self.resolution - 1)

    @property
    def spacing(self) -> float:
        """Coarsest axis step."""
        return float(self.spacings.max())

    @property
    def band(self) -> float:
        return 0.5 * self.spacing if self.epsilon is None else self.epsilon

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, self.resolution) for lo, hi in zip(self.lower, self.upper)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return grid.reshape(-1, 3)


class IcpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: int = Field(default=30, gt=0)
    cutoff: float = Field(default=0.02, gt=0)
    cutoff_shrink: float = Field(default=0.9, gt=0, le=1)
    min_cutoff: float = Field(default=0.005, gt=0)
    min_correspondences: int = Field(default=10, gt=0)
    tolerance: float = Field(default=1e-5, gt=0)
    visible_only: bool = Field(default=True, description="match only model points facing the camera")


class PlanParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    use_icp: bool = True
    icp: IcpParams = Field(default_factory=IcpParams)
    clearance: float = Field(default=0.005, ge=0)
    gravity_world: tuple[float, float, float] = (0.0, 0.0, -1.0)
    dedup_translation: float = Field(default=0.005, ge=0)
    dedup_angle_deg: float = Field(default=10.0, ge=0)
    peak_threshold: float = Field(default=0.4, ge=0, le=1)
    peak_window: int = Field(default=5, ge=1)


class SceneObservation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    depth: np.ndarray = Field(description="(H, W) meters, 0 where empty")
    camera: CameraIntrinsics
    camera_pose: Pose = Field(description="camera frame expressed in the world frame")
    cloud: PointCloud = Field(description="back-projected points with normals, camera frame")

    def gravity_in_camera(self, gravity_world) -> np.ndarray:
        direction = self.camera_pose.inverse().apply_direction(np.asarray(gravity_world, dtype=np.float64))
        return direction / np.linalg.norm(direction)


class ReconstructedObject(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    surface_points: PointCloud
    grasp_manifold: list[Grasp]
    centroid: np.ndarray
    pose: Optional[Pose] = None
    has_grasps: bool = True


class StageCounts(BaseModel):
    decoded: int = 0
    collision_free: int = 0
    selected: int = 0


ObjectStatus = Literal["planned", "no-grasps", "empty-reconstruction"]


class ObjectPlan(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    status: ObjectStatus
    grasp: Optional[Grasp] = None
    score: Optional[float] = None
    counts: StageCounts = Field(default_factory=StageCounts)
    icp_failed: bool = False
    icp_residual: Optional[float] = None
    pose: Optional[Pose] = None
    surface: Optional[PointCloud] = Field(default=None, description="reconstruction in the camera frame")
    ranked: list[Grasp] = Field(default_factory=list, description="collision-free grasps, lowest torque first")
    scores: list[float] = Field(default_factory=list)


class PlanResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    objects: list[ObjectPlan] = Field(default_factory=list)
    rejected: dict[str, int] = Field(default_factory=lambda: {"collision": 0})

    @property
    def selections(self) -> list[ObjectPlan]:
        """Planned objects ordered by torque score, lowest first."""
        planned = [o for o in self.objects if o.grasp is not None]
        return sorted(planned, key=lambda o: (o.score, o.index))
