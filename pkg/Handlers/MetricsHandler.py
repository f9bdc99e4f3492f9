import logging
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from Handlers.GeometryHandler import TriMesh, sample_surface, voxelize
from Handlers.GripperHandler import box_corners, check_antipodal_batch, check_collision_mesh_batch
from Handlers.SeedHandler import derive_seed
from Models.Dataset import ObjectRecord, SceneRecord
from Models.Episode import EpisodeLog, MetricReport
from Models.Errors import EmptyCloudError, NoGraspsError
from Models.Geometry import GridBounds, PointCloud
from Models.Gripper import Grasp, GripperModel, stack_poses
from Models.Pose import Pose

logger = logging.getLogger(__name__)

SUCCESS_CLEARANCE = 0.005


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Sum of the two directed mean nearest-neighbor distances, in millimeters."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("chamfer distance needs two non-empty clouds")
    a_to_b, _ = cKDTree(b.points).query(a.points)
    b_to_a, _ = cKDTree(a.points).query(b.points)
    return 1000.0 * (float(a_to_b.mean()) + float(b_to_a.mean()))


def fill_columns(occupancy: np.ndarray) -> np.ndarray:
    """Fills each (x, y) column between its lowest and highest occupied cell."""
    any_cell = occupancy.any(axis=2)
    depth = occupancy.shape[2]
    first = occupancy.argmax(axis=2)
    last = depth - 1 - occupancy[:, :, ::-1].argmax(axis=2)
    z = np.arange(depth)
    return any_cell[..., None] & (z >= first[..., None]) & (z <= last[..., None])


def iou3d(a: PointCloud, b: PointCloud, spacing: float = 0.005) -> float:
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("IoU needs two non-empty clouds")
    both = np.vstack([a.points, b.points])
    grid = GridBounds.covering(both.min(axis=0), both.max(axis=0), spacing)
    solid_a = fill_columns(voxelize(a, grid).occupancy)
    solid_b = fill_columns(voxelize(b, grid).occupancy)
    union = int((solid_a | solid_b).sum())
    if union == 0:
        raise EmptyCloudError("union of occupied cells is empty")
    return int((solid_a & solid_b).sum()) / union


def to_object_frame(grasps: list[Grasp], pose: Pose) -> np.ndarray:
    return pose.inverse().matrix @ stack_poses(grasps)


def analytic_success(
    mesh: TriMesh,
    pose: Pose,
    grasp: Grasp,
    mu: float = 0.8,
    clearance: float = SUCCESS_CLEARANCE,
    model: Optional[GripperModel] = None,
) -> bool:
    """Antipodal at mu and clear of the object; `pose` places the mesh in the grasp's frame."""
    local = to_object_frame([grasp], pose)
    if not check_antipodal_batch(mesh, local, mu, model)[0]:
        return False
    return not check_collision_mesh_batch(mesh, local, clearance, model)[0]


def target_object(scene: SceneRecord, grasp: Grasp, model: Optional[GripperModel] = None) -> Optional[int]:
    """Index of the object whose center is nearest the finger-window center."""
    if not scene.objects:
        return None
    model = model or GripperModel.default()
    center = grasp.pose.apply(model.window_center)
    distances = [np.linalg.norm(o.pose.translation - center) for o in scene.objects]
    return int(np.argmin(distances))


def scene_success(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    grasp: Grasp,
    mu: float = 0.8,
    clearance: float = SUCCESS_CLEARANCE,
    model: Optional[GripperModel] = None,
    excluded: frozenset[int] = frozenset(),
) -> tuple[Optional[int], bool, Optional[str]]:
    """World-frame attempt: (target index, success, failure reason)."""
    model = model or GripperModel.default()
    target = target_object(scene, grasp, model)
    if target is None:
        return None, False, "no-target"
    if target in excluded:
        return target, False, "excluded"
    if box_corners(model, grasp.pose.matrix).min(axis=0)[2] < scene.table_z:
        return target, False, "table-collision"
    for placed in scene.objects:
        mesh = library[placed.object_id].mesh
        if check_collision_mesh_batch(mesh, to_object_frame([grasp], placed.pose), clearance, model)[0]:
            return target, False, "object-collision"
    placed = scene.objects[target]
    if not check_antipodal_batch(library[placed.object_id].mesh, to_object_frame([grasp], placed.pose), mu, model)[0]:
        return target, False, "not-antipodal"
    return target, True, None


def aggregate(
    logs: list[EpisodeLog],
    total_objects: int,
    environment: str = "packed",
    seed: int = 0,
) -> MetricReport:
    attempts = sum(len(log.attempts) for log in logs)
    successes = sum(log.successes for log in logs)
    return MetricReport(
        environment=environment,
        success_rate=successes / attempts if attempts else None,
        declutter_rate=successes / total_objects if total_objects else None,
        attempts=attempts,
        successes=successes,
        total_objects=total_objects,
        n_scenes=len(logs),
        seed=seed,
    )


def quality_sweep(
    grasps: list[Grasp],
    mesh: TriMesh,
    pose: Pose,
    mu_list: list[float],
    k: int = 50,
    clearance: float = SUCCESS_CLEARANCE,
    model: Optional[GripperModel] = None,
) -> dict[str, float]:
    """Simplified AP: fraction of the top-k ranked grasps that succeed analytically, per friction."""
    if not grasps:
        raise NoGraspsError("quality sweep needs at least one grasp")
    top = to_object_frame(grasps[:k], pose)
    free = ~check_collision_mesh_batch(mesh, top, clearance, model)
    return {
        f"{mu:g}": float(np.mean(free & check_antipodal_batch(mesh, top, mu, model)))
        for mu in mu_list
    }


def scene_ground_truth(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    frame: Pose,
    n_per_object: int = 2000,
    seed: int = 0,
) -> PointCloud:
    """Surface samples of every scene object, expressed in `frame` (a world-to-frame transform)."""
    points = []
    for index, placed in enumerate(scene.objects):
        cloud = sample_surface(library[placed.object_id].mesh, n_per_object, seed=derive_seed(seed, "gt-surface", index))
        points.append(frame.compose(placed.pose).apply(cloud.points))
    return PointCloud(points=np.concatenate(points) if points else np.zeros((0, 3)))


def reconstruction_metrics(predicted: PointCloud, truth: PointCloud, spacing: float = 0.005) -> tuple[float, float]:
    return chamfer(predicted, truth), iou3d(predicted, truth, spacing)
