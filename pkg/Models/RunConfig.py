import json
import os
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from Models.Errors import ConfigError
from Models.Geometry import CameraIntrinsics, DepthNoise
from Models.Percept import EncoderNoise
from Models.Planning import GridSpec, PlanParams
from Models.Training import TrainConfig


class CameraSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    intrinsics: CameraIntrinsics = Field(default_factory=CameraIntrinsics.default)
    eye: tuple[float, float, float] = (0.0, -0.3, 0.5)
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    depth_noise: DepthNoise = Field(default_factory=DepthNoise)
    use_depth_noise: bool = True


class DatagenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_surface_points: int = Field(default=1000, gt=0)
    n_rotations: int = Field(default=24, gt=0)
    n_samples: int = Field(default=100_000, gt=0)
    mu: float = Field(default=0.5, gt=0)
    clearance: float = Field(default=0.003, ge=0)
    standoff: float = Field(default=0.01, ge=0)
    near_fraction: float = Field(default=0.8, ge=0, le=1)
    near_sigma: float = Field(default=0.025, gt=0)
    bbox_scale: float = Field(default=1.5, gt=0)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_scenes: int = Field(default=50, ge=0)
    mu: float = Field(default=0.8, gt=0)
    mu_list: list[float] = Field(default_factory=lambda: [0.4, 0.8])
    top_k: int = Field(default=50, gt=0)
    iou_spacing: float = Field(default=0.005, gt=0)
    clearance: float = Field(default=0.005, ge=0)
    ablate_icp: bool = False
    poisson_mean: float = Field(default=4.0, gt=0)
    count_range: tuple[int, int] = (1, 6)
    max_consecutive_failures: int = Field(default=3, gt=0)
    max_object_failures: int = Field(default=2, gt=0)
    gt_points_per_object: int = Field(default=2000, gt=0)


class RunConfig(BaseModel):
    """Everything a command needs; written next to its outputs."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    data_dir: str = "data"
    dataset_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: Optional[str] = None
    objects: list[str] = Field(default_factory=list, description="built-in primitive names or mesh paths; empty means all primitives")
    gripper_config: Optional[str] = None
    threads: int = Field(default=1, gt=0)
    log_level: str = "INFO"
    camera: CameraSpec = Field(default_factory=CameraSpec)
    datagen: DatagenConfig = Field(default_factory=DatagenConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid: GridSpec = Field(default_factory=GridSpec)
    plan: PlanParams = Field(default_factory=PlanParams)
    noise: EncoderNoise = Field(default_factory=EncoderNoise)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset_dir or Path(self.data_dir) / "dataset")

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint or Path(self.data_dir) / "sgdf.ckpt")

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir or Path(self.data_dir) / "out")


def _set_dotted(target: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    for key in keys[:-1]:
        target = target.setdefault(key, {})
    target[keys[-1]] = value


def _deep_merge(base: dict, update: dict) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def env_overrides() -> dict:
    values: dict[str, Any] = {}
    if os.getenv("GRASPSCOPE_DATA_DIR"):
        values["data_dir"] = os.getenv("GRASPSCOPE_DATA_DIR")
    if os.getenv("GRASPSCOPE_THREADS"):
        values["threads"] = os.getenv("GRASPSCOPE_THREADS")
    if os.getenv("GRASPSCOPE_LOG_LEVEL"):
        values["log_level"] = os.getenv("GRASPSCOPE_LOG_LEVEL")
    return values


def load_run_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Flags (dotted keys) over the JSON file over the environment over defaults."""
    data = env_overrides()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = _deep_merge(data, json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
    nested: dict[str, Any] = {}
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(nested, key, value)
    data = _deep_merge(data, nested)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    if config.gripper_config and not Path(config.gripper_config).exists():
        raise ConfigError(f"gripper config not found: {config.gripper_config}")
    return config
