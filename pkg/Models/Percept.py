import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from Models.Pose import Pose


class Detection(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pixel: tuple[int, int] = Field(description="(u, v) = (column, row)")
    objectness: float = Field(ge=0, le=1)
    pose: Pose = Field(description="object canonical frame in the camera frame")
    code: np.ndarray


class EncoderLossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    heat: float = Field(default=100.0, gt=0)
    pose: float = Field(default=5.0, gt=0)
    shape: float = Field(default=1.0, gt=0)


class EncoderNoise(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_trans: float = Field(default=0.0, ge=0, description="meters, per axis")
    sigma_rot: float = Field(default=0.0, ge=0, description="radians, about a random axis")
    sigma_code: float = Field(default=0.0, ge=0, description="per latent channel")


class EncoderMaps(BaseModel):
    """Per-pixel encoder output: what a backbone (or the oracle) produces."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    heatmap: np.ndarray
    pose_map: np.ndarray
    code_map: np.ndarray


class EncoderLoss(BaseModel):
    heat: float
    pose: float
    shape: float
    total: float
