from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from Models.Pose import Pose

GraspFrame = Literal["object", "camera", "world"]

FLIP = np.diag([-1.0, -1.0, 1.0])


class CollisionBox(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    pose: Pose = Field(description="box center and orientation in the gripper frame")
    half_extents: np.ndarray

    @field_validator("half_extents", mode="before")
    @classmethod
    def _as_extents(cls, value):
        extents = np.asarray(value, dtype=np.float64).reshape(3)
        if np.any(extents <= 0):
            raise ValueError("half extents must be positive")
        return extents


class GripperModel(BaseModel):
    """Parallel-jaw gripper. +z is the approach axis, x the closing axis."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    control_points: np.ndarray = Field(description="(5, 3) palm point plus two mirrored finger pairs")
    max_opening: float = Field(gt=0)
    finger_depth: float = Field(gt=0)
    finger_offset: float = Field(gt=0, description="|x| of the inner finger planes")
    finger_base: float = Field(gt=0, description="z where the finger window starts")
    collision_boxes: list[CollisionBox]

    @field_validator("control_points", mode="before")
    @classmethod
    def _as_points(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(5, 3)

    @model_validator(mode="after")
    def _flip_symmetric(self):
        flipped = self.control_points @ FLIP.T
        for point in flipped:
            if not np.any(np.all(np.isclose(self.control_points, point, atol=1e-12), axis=1)):
                raise ValueError("control points are not symmetric under the finger swap")
        return self

    @classmethod
    def from_dimensions(
        cls,
        max_opening: float = 0.08,
        finger_depth: float = 0.046,
        finger_offset: float = 0.041,
        finger_base: float = 0.066,
        finger_thickness: float = 0.01,
        finger_width: float = 0.02,
        palm_half_extents: tuple[float, float, float] = (0.05, 0.0125, 0.033),
    ) -> "GripperModel":
        tip = finger_base + finger_depth
        control_points = np.array([
            [0.0, 0.0, 0.0],
            [finger_offset, 0.0, finger_base],
            [-finger_offset, 0.0, finger_base],
            [finger_offset, 0.0, tip],
            [-finger_offset, 0.0, tip],
        ])
        finger_half = np.array([finger_thickness / 2, finger_width / 2, finger_depth / 2])
        finger_x = finger_offset + finger_thickness / 2
        finger_z = finger_base + finger_depth / 2
        boxes = [
            CollisionBox(
                name="palm",
                pose=Pose.trusted(np.eye(3), np.array([0.0, 0.0, finger_base - palm_half_extents[2]])),
                half_extents=np.asarray(palm_half_extents),
            ),
            CollisionBox(
                name="finger_left",
                pose=Pose.trusted(np.eye(3), np.array([finger_x, 0.0, finger_z])),
                half_extents=finger_half,
            ),
            CollisionBox(
                name="finger_right",
                pose=Pose.trusted(np.eye(3), np.array([-finger_x, 0.0, finger_z])),
                half_extents=finger_half,
            ),
        ]
        return cls(
            control_points=control_points,
            max_opening=max_opening,
            finger_depth=finger_depth,
            finger_offset=finger_offset,
            finger_base=finger_base,
            collision_boxes=boxes,
        )

    @classmethod
    def default(cls) -> "GripperModel":
        return cls.from_dimensions()

    @property
    def window_center(self) -> np.ndarray:
        """Center of the finger window; the closing axis runs through it."""
        return np.array([0.0, 0.0, self.finger_base + self.finger_depth / 2])


class Grasp(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pose: Pose
    frame: GraspFrame = "object"

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation

    def flipped(self) -> "Grasp":
        """Same grasp with the fingers swapped (pi about the approach axis)."""
        return Grasp(pose=self.pose.compose(Pose.trusted(FLIP, np.zeros(3))), frame=self.frame)


class ContactPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    c1: np.ndarray
    c2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray

    @field_validator("n1", "n2", mode="before")
    @classmethod
    def _unit(cls, value):
        normal = np.asarray(value, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
            raise ValueError("contact normals must be unit vectors")
        return normal

    @field_validator("c1", "c2", mode="before")
    @classmethod
    def _point(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(3)

    @property
    def width(self) -> float:
        return float(np.linalg.norm(self.c2 - self.c1))


def stack_poses(grasps: list[Grasp]) -> np.ndarray:
    """(N, 4, 4) homogeneous matrices."""
    if not grasps:
        return np.zeros((0, 4, 4))
    return np.stack([g.pose.matrix for g in grasps])


def grasps_from_matrices(matrices: np.ndarray, frame: GraspFrame = "object") -> list[Grasp]:
    return [
        Grasp.model_construct(pose=Pose.trusted(m[:3, :3], m[:3, 3]), frame=frame)
        for m in np.asarray(matrices)
    ]


def check_same_frame(*grasps: Optional[Grasp]) -> None:
    frames = {g.frame for g in grasps if g is not None}
    if len(frames) > 1:
        raise ValueError(f"grasps live in different frames: {sorted(frames)}")
