import logging
from typing import Callable, Optional

import numpy as np
from langgraph.constants import END, START
from langgraph.graph import StateGraph

from Flows.PlanFlow import plan
from Handlers.DatagenHandler import make_packed_scene, render_scene
from Handlers.GeometryHandler import look_at, observation_cloud
from Handlers.MetricsHandler import (
    aggregate,
    quality_sweep,
    reconstruction_metrics,
    scene_ground_truth,
    scene_success,
    target_object,
)
from Handlers.PerceptHandler import decode_detections, oracle_encoder
from Handlers.PipelineHandler import transform_grasps
from Handlers.SeedHandler import derive_seed
from Handlers.SgdfDecoder import SgdfDecoder
from Models.Dataset import ObjectRecord, SceneRecord
from Models.Episode import Attempt, EpisodeLog, MetricReport
from Models.Errors import EmptyCloudError, NoGraspsError
from Models.Geometry import PointCloud
from Models.Gripper import Grasp, GripperModel
from Models.Percept import EncoderNoise
from Models.Planning import GridSpec, PlanParams, PlanResult, SceneObservation
from Models.Pose import Pose
from Models.RunConfig import CameraSpec, EvalConfig, RunConfig
from States.EpisodeState import EpisodeState

logger = logging.getLogger(__name__)

Planner = Callable[[SceneRecord, SceneObservation], PlanResult]


class OraclePlanner:
    """Ground-truth encoder maps (optionally perturbed) fed through peak decoding and the planning chain."""

    def __init__(
        self,
        decoder: SgdfDecoder,
        library: dict[str, ObjectRecord],
        code_lookup: dict[str, np.ndarray],
        noise: Optional[EncoderNoise] = None,
        grid: Optional[GridSpec] = None,
        params: Optional[PlanParams] = None,
        gripper: Optional[GripperModel] = None,
        seed: int = 0,
    ):
        self.decoder = decoder
        self.library = library
        self.code_lookup = code_lookup
        self.noise = noise or EncoderNoise()
        self.grid = grid or GridSpec()
        self.params = params or PlanParams()
        self.gripper = gripper or GripperModel.default()
        self.seed = seed

    def __call__(self, scene: SceneRecord, observation: SceneObservation) -> PlanResult:
        maps = oracle_encoder(
            scene, self.library, observation.camera, observation.camera_pose, self.code_lookup, self.noise, self.seed
        )
        detections = decode_detections(
            maps.heatmap, maps.pose_map, maps.code_map, self.params.peak_threshold, self.params.peak_window
        )
        logger.info(f"{len(detections)} detection(s) in {scene.scene_id}")
        return plan(detections, self.decoder, observation, self.grid, self.params, self.gripper)


def observe(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    camera: CameraSpec,
    seed: int = 0,
) -> SceneObservation:
    camera_pose = look_at(camera.eye, camera.target)
    noise = camera.depth_noise if camera.use_depth_noise else None
    depth, _ = render_scene(scene, library, camera.intrinsics, camera_pose, noise, seed)
    return SceneObservation(
        depth=depth,
        camera=camera.intrinsics,
        camera_pose=camera_pose,
        cloud=observation_cloud(depth, camera.intrinsics),
    )


def to_world(grasp: Grasp, camera_pose: Pose) -> Grasp:
    return transform_grasps([grasp], camera_pose, frame="world")[0]


class EpisodeFlow:
    """Observe, plan, attempt, remove on success; stops when cleared, stuck or out of grasps."""

    def __init__(
        self,
        planner: Planner,
        library: dict[str, ObjectRecord],
        camera: Optional[CameraSpec] = None,
        config: Optional[EvalConfig] = None,
        gripper: Optional[GripperModel] = None,
        seed: int = 0,
    ):
        self.planner = planner
        self.library = library
        self.camera = camera or CameraSpec()
        self.config = config or EvalConfig()
        self.gripper = gripper or GripperModel.default()
        self.seed = seed
        self.graph = self.build_graph()

    def build_graph(self):
        workflow = StateGraph(EpisodeState)

        workflow.add_node("observe", self.observe)
        workflow.add_node("plan", self.plan)
        workflow.add_node("attempt", self.attempt)
        workflow.add_node("finish", self.finish)

        workflow.add_conditional_edges(START, self.should_continue, {"continue": "observe", "stop": "finish"})
        workflow.add_edge("observe", "plan")
        workflow.add_edge("plan", "attempt")
        workflow.add_conditional_edges("attempt", self.should_continue, {"continue": "observe", "stop": "finish"})
        workflow.add_edge("finish", END)
        return workflow.compile()

    def _view(self, state) -> SceneRecord:
        scene = state["scene"]
        return scene.model_copy(update={"objects": [scene.objects[i] for i in state["remaining"]]})

    def observe(self, state):
        logger.info(f"---OBSERVE {state['scene'].scene_id} STEP {state['step']}---")
        observation = observe(
            self._view(state),
            self.library,
            self.camera,
            seed=derive_seed(self.seed, state["scene"].scene_id, "depth", state["step"]),
        )
        update = {"observation": observation}
        if state["step"] == 0:
            update["first_observation"] = observation
        return update

    def plan(self, state):
        logger.info("---PLAN---")
        result = self.planner(self._view(state), state["observation"])
        update = {"plan_result": result}
        if state["step"] == 0:
            update["first_plan"] = result
        return update

    def attempt(self, state):
        logger.info("---ATTEMPT GRASP---")
        view = self._view(state)
        remaining = state["remaining"]
        failures = dict(state["failures"])
        log = state["log"]
        camera_pose = state["observation"].camera_pose
        excluded = frozenset(
            i for i, original in enumerate(remaining) if failures.get(original, 0) >= self.config.max_object_failures
        )

        selections = state["plan_result"].selections
        grasp = None
        for selection in selections:
            candidate = to_world(selection.grasp, camera_pose)
            if target_object(view, candidate, self.gripper) not in excluded:
                grasp = candidate
                break
        if grasp is None and selections:
            # every selection targets an excluded object: the top one is attempted and fails as excluded
            grasp = to_world(selections[0].grasp, camera_pose)
        if grasp is None:
            logger.info("no grasp predicted for a remaining object")
            return {"log": log.model_copy(update={"termination": "no-grasp-predicted"}), "step": state["step"] + 1}

        target, success, reason = scene_success(
            view, self.library, grasp, self.config.mu, self.config.clearance, self.gripper, excluded
        )
        original = remaining[target]
        attempt = Attempt(
            object_index=original,
            object_id=view.objects[target].object_id,
            grasp=grasp,
            success=success,
            failure_reason=reason,
        )
        log = log.model_copy(update={"attempts": log.attempts + [attempt]})
        consecutive = 0 if success else state["consecutive_failures"] + 1
        if success:
            remaining = [i for i in remaining if i != original]
        else:
            failures[original] = failures.get(original, 0) + 1
            if failures[original] == self.config.max_object_failures:
                logger.warning(f"object {original} ({attempt.object_id}) excluded after {failures[original]} failures")
        print(f"{state['scene'].scene_id} step {state['step']}: {attempt.object_id} {'ok' if success else reason}")

        if consecutive >= self.config.max_consecutive_failures:
            log = log.model_copy(update={"termination": "three-consecutive-failures"})
        return {
            "log": log,
            "remaining": remaining,
            "failures": failures,
            "consecutive_failures": consecutive,
            "step": state["step"] + 1,
        }

    def finish(self, state):
        log = state["log"]
        if log.termination is None:
            log = log.model_copy(update={"termination": "cleared"})
        logger.info(f"{log.scene_id}: {log.successes}/{len(log.attempts)} successful, {log.termination}")
        return {"log": log}

    ### Edges

    def should_continue(self, state):
        if state["log"].termination is not None or not state["remaining"]:
            return "stop"
        return "continue"

    def run(self, scene: SceneRecord):
        n = len(scene.objects)
        max_steps = (self.config.max_object_failures + 1) * n + 1
        return self.graph.invoke(
            {
                "scene": scene,
                "remaining": list(range(n)),
                "failures": {},
                "consecutive_failures": 0,
                "step": 0,
                "observation": None,
                "plan_result": None,
                "first_plan": None,
                "first_observation": None,
                "log": EpisodeLog(scene_id=scene.scene_id, n_objects=n),
            },
            {"recursion_limit": 3 * max_steps + 10},
        )


def run_episode(
    scene: SceneRecord,
    planner: Planner,
    library: dict[str, ObjectRecord],
    camera: Optional[CameraSpec] = None,
    config: Optional[EvalConfig] = None,
    gripper: Optional[GripperModel] = None,
    seed: int = 0,
) -> EpisodeLog:
    return EpisodeFlow(planner, library, camera, config, gripper, seed).run(scene)["log"]


def first_step_shape_metrics(
    state, library: dict[str, ObjectRecord], config: EvalConfig, seed: int
) -> Optional[tuple[float, float]]:
    """Chamfer and IoU of the union of first-step reconstructions against the scene's ground truth, camera frame."""
    first_plan, observation = state["first_plan"], state["first_observation"]
    if first_plan is None or observation is None:
        return None
    surfaces = [o.surface.points for o in first_plan.objects if o.surface is not None and len(o.surface)]
    if not surfaces:
        return None
    predicted = PointCloud(points=np.concatenate(surfaces))
    truth = scene_ground_truth(
        state["scene"], library, observation.camera_pose.inverse(), config.gt_points_per_object, seed
    )
    try:
        return reconstruction_metrics(predicted, truth, config.iou_spacing)
    except EmptyCloudError as e:
        logger.warning(f"{state['scene'].scene_id}: no shape metrics ({e})")
        return None


def first_step_quality(
    state, library: dict[str, ObjectRecord], config: EvalConfig, gripper: GripperModel
) -> list[dict[str, float]]:
    """Simplified-AP per planned object, each ranked list scored against the nearest ground-truth object."""
    first_plan, observation = state["first_plan"], state["first_observation"]
    if first_plan is None or observation is None:
        return []
    scene = state["scene"]
    camera_pose = observation.camera_pose
    sweeps = []
    for planned in first_plan.objects:
        if not planned.ranked or planned.pose is None:
            continue
        center = camera_pose.apply(planned.pose.translation)
        nearest = int(np.argmin([np.linalg.norm(o.pose.translation - center) for o in scene.objects]))
        placed = scene.objects[nearest]
        world = transform_grasps(planned.ranked, camera_pose, frame="world")
        try:
            sweeps.append(
                quality_sweep(
                    world, library[placed.object_id].mesh, placed.pose, config.mu_list, config.top_k, config.clearance, gripper
                )
            )
        except NoGraspsError:
            continue
    return sweeps


def run_evaluation(
    config: RunConfig,
    decoder: SgdfDecoder,
    code_lookup: dict[str, np.ndarray],
    records: list[ObjectRecord],
    gripper: Optional[GripperModel] = None,
) -> list[MetricReport]:
    """One report per environment: packed, plus packed without ICP when ablated."""
    gripper = gripper or GripperModel.default()
    library = {r.object_id: r for r in records}
    settings = config.eval
    variants = [("packed", config.plan)]
    if settings.ablate_icp:
        variants.append(("packed w/o ICP", config.plan.model_copy(update={"use_icp": False})))

    scenes = [
        make_packed_scene(
            records,
            seed=derive_seed(config.seed, "eval-scene", i),
            scene_id=f"scene-{i:03d}",
            lam=settings.poisson_mean,
            count_range=settings.count_range,
        )
        for i in range(settings.n_scenes)
    ]

    reports = []
    for environment, params in variants:
        logger.info(f"---EVALUATE {environment.upper()}---")
        planner = OraclePlanner(decoder, library, code_lookup, config.noise, config.grid, params, gripper, config.seed)
        flow = EpisodeFlow(planner, library, config.camera, settings, gripper, config.seed)
        logs, shapes, sweeps = [], [], []
        for scene in scenes:
            state = flow.run(scene)
            logs.append(state["log"])
            shape = first_step_shape_metrics(state, library, settings, derive_seed(config.seed, scene.scene_id))
            if shape is not None:
                shapes.append(shape)
            sweeps.extend(first_step_quality(state, library, settings, gripper))

        report = aggregate(logs, sum(len(s.objects) for s in scenes), environment, config.seed)
        update = {}
        if shapes:
            update["chamfer_mm"] = float(np.mean([c for c, _ in shapes]))
            update["iou"] = float(np.mean([iou for _, iou in shapes]))
        if sweeps:
            update["ap_per_mu"] = {key: float(np.mean([s[key] for s in sweeps])) for key in sweeps[0]}
        reports.append(report.model_copy(update=update))
    return reports
