from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

UNIT_NORM_TOL = 1e-6


class PointCloud(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray = Field(description="(N, 3) positions in meters")
    normals: Optional[np.ndarray] = Field(default=None, description="(N, 3) unit normals")

    @field_validator("points", mode="before")
    @classmethod
    def _as_points(cls, value):
        points = np.asarray(value, dtype=np.float64).reshape(-1, 3)
        return points

    @field_validator("normals", mode="before")
    @classmethod
    def _as_normals(cls, value):
        if value is None:
            return None
        normals = np.asarray(value, dtype=np.float64).reshape(-1, 3)
        if len(normals) and not np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=UNIT_NORM_TOL, rtol=0.0):
            raise ValueError("normals must have unit norm")
        return normals

    @model_validator(mode="after")
    def _lengths_match(self):
        if self.normals is not None and len(self.normals) != len(self.points):
            raise ValueError("normals and points differ in length")
        return self

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(points=np.zeros((0, 3)))


class CameraIntrinsics(BaseModel):
    """Pinhole camera. +z forward, +x right, +y down, pixel (0, 0) top-left."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    @model_validator(mode="after")
    def _principal_point_inside(self):
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self

    @classmethod
    def default(cls) -> "CameraIntrinsics":
        return cls(fx=320.0, fy=320.0, cx=160.0, cy=120.0, width=320, height=240)


class DepthNoise(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma: float = Field(default=0.002, ge=0, description="additive Gaussian std in meters")
    dropout: float = Field(default=0.0, ge=0, le=1, description="per-pixel probability of a missing reading")


class GridBounds(BaseModel):
    """Axis-aligned regular grid used for voxelization."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    origin: np.ndarray
    spacing: float = Field(gt=0)
    dims: tuple[int, int, int]

    @field_validator("origin", mode="before")
    @classmethod
    def _as_origin(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(3)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value):
        if any(d <= 0 for d in value):
            raise ValueError("grid dims must be positive")
        return value

    @classmethod
    def covering(cls, lower: np.ndarray, upper: np.ndarray, spacing: float) -> "GridBounds":
        lower = np.asarray(lower, dtype=np.float64)
        extent = np.asarray(upper, dtype=np.float64) - lower
        dims = tuple(int(d) for d in np.floor(extent / spacing).astype(int) + 1)
        return cls(origin=lower, spacing=spacing, dims=dims)


class VoxelGrid(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    origin: np.ndarray
    spacing: float = Field(gt=0)
    dims: tuple[int, int, int]
    occupancy: np.ndarray = Field(description="boolean array of shape dims, x-major (C order)")

    @model_validator(mode="after")
    def _occupancy_matches_dims(self):
        if self.occupancy.size != int(np.prod(self.dims)):
            raise ValueError("occupancy size does not match dims")
        return self

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())
