from typing import Optional

from typing_extensions import TypedDict

from Models.Gripper import Grasp
from Models.Percept import Detection
from Models.Planning import ObjectPlan, ReconstructedObject, SceneObservation


class PlanState(TypedDict):

    detections: list[Detection]
    observation: SceneObservation
    index: int
    reconstruction: Optional[ReconstructedObject]
    camera_grasps: list[Grasp]
    survivors: list[Grasp]
    current: Optional[ObjectPlan]
    plans: list[ObjectPlan]
    rejected: dict[str, int]
