from typing import Optional

from typing_extensions import TypedDict

from Models.Dataset import SceneRecord
from Models.Episode import EpisodeLog
from Models.Planning import PlanResult, SceneObservation


class EpisodeState(TypedDict):

    scene: SceneRecord
    remaining: list[int]
    failures: dict[int, int]
    consecutive_failures: int
    step: int
    observation: Optional[SceneObservation]
    plan_result: Optional[PlanResult]
    first_plan: Optional[PlanResult]
    first_observation: Optional[SceneObservation]
    log: EpisodeLog
