import numpy as np
import pytest
import trimesh

from Flows.EpisodeFlow import EpisodeFlow, observe, run_episode, run_evaluation, to_world
from Flows.GenFlow import MANIFEST_NAME, GenFlow
from Flows.PlanFlow import plan
from Handlers.ObjectLibrary import library_by_id
from Handlers.StorageHandler import load_dataset
from Models.Dataset import ObjectRecord, PlacedObject, SceneRecord
from Models.Geometry import CameraIntrinsics, PointCloud
from Models.Gripper import Grasp
from Models.Percept import Detection
from Models.Planning import GridSpec, ObjectPlan, PlanParams, PlanResult, SceneObservation
from Models.Pose import Pose
from Models.RunConfig import DatagenConfig, EvalConfig, RunConfig

TOP_DOWN = np.diag([1.0, -1.0, -1.0])
SMALL_GEN = DatagenConfig(n_surface_points=20, n_rotations=4, n_samples=50)


def _two_cubes() -> SceneRecord:
    objects = [
        PlacedObject(object_id="cube", pose=Pose.trusted(np.eye(3), np.array([x, 0.0, 0.025])), footprint_radius=0.036)
        for x in (-0.08, 0.08)
    ]
    return SceneRecord(scene_id="two-cubes", objects=objects)


def _camera_grasp(observation: SceneObservation, x: float, z: float) -> Grasp:
    world = Pose.trusted(TOP_DOWN, np.array([x, 0.0, z]))
    return Grasp(pose=observation.camera_pose.inverse().compose(world), frame="camera")


def _scripted_planner(height: float):
    """One top-down grasp per visible object at the given height, first object ranked first."""

    def planner(view: SceneRecord, observation: SceneObservation) -> PlanResult:
        plans = [
            ObjectPlan(
                index=i,
                status="planned",
                grasp=_camera_grasp(observation, placed.pose.translation[0], height),
                score=float(i),
            )
            for i, placed in enumerate(view.objects)
        ]
        return PlanResult(objects=plans)

    return planner


# ---- GenFlow ----------------------------------------------------------------------

def test_gen_flow_writes_dataset(cube_record, tmp_path):
    state = GenFlow(SMALL_GEN, tmp_path, seed=3).run([cube_record])
    assert state["errors"] == {}
    manifest = state["manifest"]
    assert manifest is not None and manifest.seed == 3
    [entry] = manifest.objects
    assert entry.object_id == "cube"
    assert entry.n_candidates == 80
    assert entry.n_samples == (50 if entry.n_valid_grasps else 0)
    for name in (MANIFEST_NAME, "cube.grsp", "cube.sgds", "cube.obj", "cube.ply"):
        assert (tmp_path / name).exists()

    loaded, samples = load_dataset(tmp_path / MANIFEST_NAME)
    assert loaded == manifest
    assert len(samples["cube"]) == entry.n_samples


def test_gen_flow_is_deterministic(cube_record, tmp_path):
    GenFlow(SMALL_GEN, tmp_path / "a", seed=5).run([cube_record])
    GenFlow(SMALL_GEN, tmp_path / "b", seed=5).run([cube_record])
    for name in ("cube.grsp", "cube.sgds"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_flow_writes_no_manifest_when_an_object_fails(cube_record, tmp_path):
    empty = ObjectRecord(object_id="empty", mesh=trimesh.Trimesh(), footprint_radius=0.01, base_offset=0.0)
    state = GenFlow(SMALL_GEN, tmp_path).run([cube_record, empty])
    assert state["manifest"] is None
    assert set(state["errors"]) == {"empty"}
    assert [e.object_id for e in state["entries"]] == ["cube"]
    assert not (tmp_path / MANIFEST_NAME).exists()


# ---- PlanFlow ---------------------------------------------------------------------

def _detection(radius: float) -> Detection:
    pose = Pose.trusted(np.eye(3), np.array([0.0, 0.0, 0.5]))
    return Detection(pixel=(32, 24), objectness=0.9, pose=pose, code=np.array([radius]))


def _observation(cloud: PointCloud) -> SceneObservation:
    camera = CameraIntrinsics(fx=128.0, fy=128.0, cx=32.0, cy=24.0, width=64, height=48)
    return SceneObservation(depth=np.zeros((48, 64)), camera=camera, camera_pose=Pose.identity(), cloud=cloud)


def test_plan_selects_the_decoded_grasp_in_camera_frame(sphere_decoder):
    result = plan(
        [_detection(0.03)], sphere_decoder, _observation(PointCloud.empty()), GridSpec(resolution=16), PlanParams(use_icp=False)
    )
    [planned] = result.objects
    assert planned.status == "planned"
    assert planned.grasp.frame == "camera"
    assert np.allclose(planned.grasp.translation, [0.0, 0.0, 0.589])
    assert planned.counts.model_dump() == {"decoded": 1, "collision_free": 1, "selected": 1}
    assert planned.surface is not None and len(planned.surface) > 0
    assert [o.index for o in result.selections] == [0]
    assert result.rejected == {"collision": 0}


def test_plan_rejects_grasps_hitting_the_scene(sphere_decoder):
    # a single observed point inside the palm
    blocked = _observation(PointCloud(points=[[0.0, 0.0, 0.556]]))
    result = plan([_detection(0.03)], sphere_decoder, blocked, GridSpec(resolution=16), PlanParams(use_icp=False))
    [planned] = result.objects
    assert planned.status == "no-grasps"
    assert planned.grasp is None
    assert planned.counts.collision_free == 0
    assert result.rejected == {"collision": 1}
    assert result.selections == []


def test_plan_reports_empty_reconstructions(sphere_decoder):
    detections = [_detection(1.0), _detection(0.03)]
    result = plan(detections, sphere_decoder, _observation(PointCloud.empty()), GridSpec(resolution=16), PlanParams(use_icp=False))
    assert [o.status for o in result.objects] == ["empty-reconstruction", "planned"]
    assert np.array_equal(result.objects[0].pose.matrix, detections[0].pose.matrix)
    assert [o.index for o in result.selections] == [1]


def test_plan_keeps_the_detected_pose_when_icp_fails(sphere_decoder):
    detection = _detection(0.03)
    result = plan([detection], sphere_decoder, _observation(PointCloud.empty()), GridSpec(resolution=16), PlanParams(use_icp=True))
    [planned] = result.objects
    assert planned.icp_failed
    assert planned.icp_residual is None
    assert np.array_equal(planned.pose.matrix, detection.pose.matrix)
    assert planned.status == "planned"


# ---- EpisodeFlow ------------------------------------------------------------------

def test_observe_and_to_world(cube_record, small_camera):
    library = library_by_id([cube_record])
    observation = observe(_two_cubes(), library, small_camera)
    assert observation.depth.shape == (48, 64)
    assert len(observation.cloud) > 0
    grasp = _camera_grasp(observation, 0.08, 0.125)
    world = to_world(grasp, observation.camera_pose)
    assert world.frame == "world"
    assert np.allclose(world.translation, [0.08, 0.0, 0.125])


def test_episode_clears_the_scene_with_good_grasps(cube_record, small_camera):
    library = library_by_id([cube_record])
    log = run_episode(_two_cubes(), _scripted_planner(0.125), library, small_camera)
    assert log.termination == "cleared"
    assert [a.object_index for a in log.attempts] == [0, 1]
    assert log.successes == 2
    assert all(a.grasp.frame == "world" for a in log.attempts)


def test_episode_stops_after_consecutive_failures(cube_record, small_camera):
    library = library_by_id([cube_record])
    flow = EpisodeFlow(_scripted_planner(0.5), library, small_camera, EvalConfig())
    state = flow.run(_two_cubes())
    log = state["log"]
    assert log.termination == "three-consecutive-failures"
    # the first object is skipped once it has failed twice
    assert [a.object_index for a in log.attempts] == [0, 0, 1]
    assert {a.failure_reason for a in log.attempts} == {"not-antipodal"}
    assert state["failures"] == {0: 2, 1: 1}
    assert state["first_plan"] is not None


def test_episode_with_one_failing_object_ends_after_three_attempts(cube_record, small_camera):
    library = library_by_id([cube_record])
    scene = SceneRecord(scene_id="one-cube", objects=_two_cubes().objects[:1])
    flow = EpisodeFlow(_scripted_planner(0.5), library, small_camera, EvalConfig())
    state = flow.run(scene)
    log = state["log"]
    assert len(log.attempts) == 3
    assert log.termination == "three-consecutive-failures"
    assert [a.failure_reason for a in log.attempts] == ["not-antipodal", "not-antipodal", "excluded"]
    assert state["failures"] == {0: 3}


def test_episode_without_predictions(cube_record, small_camera):
    library = library_by_id([cube_record])
    log = run_episode(_two_cubes(), lambda view, observation: PlanResult(), library, small_camera)
    assert log.termination == "no-grasp-predicted"
    assert log.attempts == []
    assert log.n_objects == 2


def test_evaluation_without_scenes(cube_record, sphere_decoder):
    config = RunConfig(eval=EvalConfig(n_scenes=0, ablate_icp=True))
    reports = run_evaluation(config, sphere_decoder, {"cube": np.array([0.03])}, [cube_record])
    assert [r.environment for r in reports] == ["packed", "packed w/o ICP"]
    assert all(r.success_rate is None and r.n_scenes == 0 for r in reports)


@pytest.mark.slow
def test_evaluation_of_one_scene(cube_record, sphere_decoder, small_camera):
    config = RunConfig(
        seed=4,
        camera=small_camera,
        grid=GridSpec(resolution=16),
        eval=EvalConfig(n_scenes=1, gt_points_per_object=200),
    )
    [report] = run_evaluation(config, sphere_decoder, {"cube": np.array([0.03])}, [cube_record])
    assert report.n_scenes == 1
    assert report.total_objects >= 1
    assert report.successes <= report.attempts
