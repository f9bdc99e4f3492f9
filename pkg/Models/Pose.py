import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from Models.Errors import InvalidRotationError

ORTHONORMAL_TOL = 1e-6


class Pose(BaseModel):
    """Rigid transform x -> R x + t. Translations are in meters."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray = Field(description="3x3 orthonormal matrix with det +1")
    translation: np.ndarray = Field(description="3-vector in meters")

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, value):
        rotation = np.asarray(value, dtype=np.float64)
        if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
            raise InvalidRotationError(f"rotation must be a finite 3x3 matrix, got shape {rotation.shape}")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=ORTHONORMAL_TOL, rtol=0.0):
            raise InvalidRotationError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidRotationError("rotation determinant is not +1")
        return rotation

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, value):
        translation = np.asarray(value, dtype=np.float64).reshape(-1)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise InvalidRotationError(f"translation must be a finite 3-vector, got {translation.shape}")
        return translation

    @classmethod
    def identity(cls) -> "Pose":
        return cls.trusted(np.eye(3), np.zeros(3))

    @classmethod
    def trusted(cls, rotation: np.ndarray, translation: np.ndarray) -> "Pose":
        # skips validation; callers guarantee a proper rotation
        return cls.model_construct(
            rotation=np.asarray(rotation, dtype=np.float64),
            translation=np.asarray(translation, dtype=np.float64).reshape(3),
        )

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(rotation=matrix[:3, :3], translation=matrix[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_direction(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "Pose":
        rotation_t = self.rotation.T
        return Pose.trusted(rotation_t, -rotation_t @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: x -> self(other(x))."""
        return Pose.trusted(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def flat12(self) -> np.ndarray:
        """[R|t] flattened row-major."""
        return self.matrix[:3, :4].reshape(12)
