import logging
from typing import Optional

from langgraph.constants import END, START
from langgraph.graph import StateGraph

from Handlers.PipelineHandler import decode_object, filter_grasps, rank_grasps, refine_pose_icp, transform_grasps
from Handlers.SgdfDecoder import SgdfDecoder
from Models.Errors import EmptyCloudError, EmptyReconstructionError, TooFewCorrespondencesError
from Models.Geometry import PointCloud
from Models.Gripper import GripperModel
from Models.Percept import Detection
from Models.Planning import GridSpec, ObjectPlan, PlanParams, PlanResult, SceneObservation, StageCounts
from States.PlanState import PlanState

logger = logging.getLogger(__name__)


class PlanFlow:
    """Turns detections into one collision-free, lowest-torque grasp per object, camera frame."""

    def __init__(
        self,
        decoder: SgdfDecoder,
        grid: Optional[GridSpec] = None,
        params: Optional[PlanParams] = None,
        gripper: Optional[GripperModel] = None,
    ):
        self.decoder = decoder
        self.grid = grid or GridSpec()
        self.params = params or PlanParams()
        self.gripper = gripper or GripperModel.default()
        self.graph = self.build_graph()

    def build_graph(self):
        workflow = StateGraph(PlanState)

        workflow.add_node("decode_object", self.decode)
        workflow.add_node("to_camera", self.to_camera)
        workflow.add_node("refine_pose", self.refine)
        workflow.add_node("filter_grasps", self.filter)
        workflow.add_node("select_grasp", self.select)
        workflow.add_node("advance", self.advance)

        workflow.add_conditional_edges(START, self.has_next_detection, {"next": "decode_object", "done": END})
        workflow.add_conditional_edges(
            "decode_object",
            self.decoded,
            {"ok": "to_camera", "skip": "advance"},
        )
        workflow.add_edge("to_camera", "refine_pose")
        workflow.add_edge("refine_pose", "filter_grasps")
        workflow.add_edge("filter_grasps", "select_grasp")
        workflow.add_edge("select_grasp", "advance")
        workflow.add_conditional_edges("advance", self.has_next_detection, {"next": "decode_object", "done": END})
        return workflow.compile()

    def _detection(self, state) -> Detection:
        return state["detections"][state["index"]]

    def decode(self, state):
        index = state["index"]
        logger.info(f"---DECODE OBJECT {index}---")
        try:
            reconstruction = decode_object(self.decoder, self._detection(state).code, self.grid, self.params)
        except EmptyReconstructionError as e:
            logger.warning(f"detection {index}: {e}")
            current = ObjectPlan(index=index, status="empty-reconstruction", pose=self._detection(state).pose)
            return {"reconstruction": None, "current": current}
        current = ObjectPlan(
            index=index,
            status="planned",
            counts=StageCounts(decoded=len(reconstruction.grasp_manifold)),
        )
        return {"reconstruction": reconstruction, "current": current}

    def to_camera(self, state):
        logger.info("---TO CAMERA FRAME---")
        pose = self._detection(state).pose
        reconstruction = state["reconstruction"].model_copy(update={"pose": pose})
        return {
            "reconstruction": reconstruction,
            "camera_grasps": transform_grasps(reconstruction.grasp_manifold, pose),
        }

    def refine(self, state):
        reconstruction = state["reconstruction"]
        current = state["current"]
        pose = reconstruction.pose
        icp_failed, residual = False, None
        if self.params.use_icp:
            logger.info("---REFINE POSE---")
            try:
                pose, residual = refine_pose_icp(
                    reconstruction.surface_points, state["observation"].cloud, pose, self.params.icp
                )
            except (TooFewCorrespondencesError, EmptyCloudError) as e:
                logger.warning(f"detection {current.index}: ICP failed ({e}), keeping the detected pose")
                icp_failed = True
        reconstruction = reconstruction.model_copy(update={"pose": pose})
        surface = PointCloud(points=pose.apply(reconstruction.surface_points.points))
        current = current.model_copy(
            update={"pose": pose, "icp_failed": icp_failed, "icp_residual": residual, "surface": surface}
        )
        return {
            "reconstruction": reconstruction,
            "camera_grasps": transform_grasps(reconstruction.grasp_manifold, pose),
            "current": current,
        }

    def filter(self, state):
        logger.info("---FILTER GRASPS---")
        survivors = filter_grasps(state["camera_grasps"], state["observation"].cloud, self.params.clearance, self.gripper)
        rejected = dict(state["rejected"])
        rejected["collision"] = rejected.get("collision", 0) + len(state["camera_grasps"]) - len(survivors)
        logger.info(f"{len(survivors)} of {len(state['camera_grasps'])} grasps are collision-free")
        return {"survivors": survivors, "rejected": rejected}

    def select(self, state):
        logger.info("---SELECT GRASP---")
        reconstruction = state["reconstruction"]
        current = state["current"]
        survivors = state["survivors"]
        counts = current.counts.model_copy(update={"collision_free": len(survivors)})
        if not survivors:
            logger.warning(f"detection {current.index}: no collision-free grasps")
            current = current.model_copy(update={"status": "no-grasps", "counts": counts})
            return {"current": current}
        centroid = reconstruction.pose.apply(reconstruction.centroid)
        gravity = state["observation"].gravity_in_camera(self.params.gravity_world)
        ranked, scores = rank_grasps(survivors, centroid, gravity)
        current = current.model_copy(
            update={
                "grasp": ranked[0],
                "score": float(scores[0]),
                "ranked": ranked,
                "scores": [float(s) for s in scores],
                "counts": counts.model_copy(update={"selected": 1}),
            }
        )
        return {"current": current}

    def advance(self, state):
        plans = state["plans"] + ([state["current"]] if state["current"] is not None else [])
        return {
            "plans": plans,
            "index": state["index"] + 1,
            "reconstruction": None,
            "camera_grasps": [],
            "survivors": [],
            "current": None,
        }

    ### Edges

    def has_next_detection(self, state):
        return "next" if state["index"] < len(state["detections"]) else "done"

    def decoded(self, state):
        return "ok" if state["reconstruction"] is not None else "skip"

    def run(self, detections: list[Detection], observation: SceneObservation):
        return self.graph.invoke(
            {
                "detections": detections,
                "observation": observation,
                "index": 0,
                "reconstruction": None,
                "camera_grasps": [],
                "survivors": [],
                "current": None,
                "plans": [],
                "rejected": {"collision": 0},
            },
            {"recursion_limit": 7 * len(detections) + 10},
        )


def plan(
    detections: list[Detection],
    decoder: SgdfDecoder,
    observation: SceneObservation,
    grid: Optional[GridSpec] = None,
    params: Optional[PlanParams] = None,
    gripper: Optional[GripperModel] = None,
) -> PlanResult:
    state = PlanFlow(decoder, grid, params, gripper).run(detections, observation)
    return PlanResult(objects=state["plans"], rejected=state["rejected"])
