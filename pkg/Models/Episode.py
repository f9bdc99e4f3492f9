from typing import Literal, Optional

from pydantic import BaseModel, Field

from Models.Gripper import Grasp

Termination = Literal["cleared", "three-consecutive-failures", "no-grasp-predicted"]


class Attempt(BaseModel):
    object_index: int = Field(description="index into the scene's original object list")
    object_id: str
    grasp: Grasp = Field(description="world frame")
    success: bool
    failure_reason: Optional[str] = None


class EpisodeLog(BaseModel):
    scene_id: str
    n_objects: int
    attempts: list[Attempt] = Field(default_factory=list)
    termination: Optional[Termination] = None

    @property
    def successes(self) -> int:
        return sum(a.success for a in self.attempts)


class MetricReport(BaseModel):
    environment: str = "packed"
    chamfer_mm: Optional[float] = Field(default=None, ge=0)
    iou: Optional[float] = Field(default=None, ge=0, le=1)
    success_rate: Optional[float] = Field(default=None, ge=0, le=1, description="None when no attempts were made")
    declutter_rate: Optional[float] = Field(default=None, ge=0, le=1)
    ap_per_mu: dict[str, float] = Field(default_factory=dict, description="simplified-AP: top-k precision per friction")
    attempts: int = 0
    successes: int = 0
    total_objects: int = 0
    n_scenes: int = 0
    seed: int = 0
    conventions: str = "CD = sum of directed mean L2 distances in mm; IoU on column-filled voxels; AP = simplified-AP"
