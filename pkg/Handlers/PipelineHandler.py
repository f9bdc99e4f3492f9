import logging
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from Handlers.GeometryHandler import estimate_normals, gram_schmidt_batch
from Handlers.GripperHandler import check_collision_points_batch
from Handlers.SgdfDecoder import SgdfDecoder, evaluate
from Models.Errors import EmptyCloudError, EmptyReconstructionError, NoGraspsError, TooFewCorrespondencesError
from Models.Geometry import PointCloud
from Models.Gripper import FLIP, Grasp, GraspFrame, GripperModel, check_same_frame, grasps_from_matrices, stack_poses
from Models.Planning import GridSpec, IcpParams, PlanParams, ReconstructedObject
from Models.Pose import Pose

logger = logging.getLogger(__name__)


# ---- reconstruction ------------------------------------------------------------------

def rotation_angles(reference: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Geodesic angles (radians) between one rotation and a stack of rotations."""
    cos = (np.einsum("ij,nij->n", reference, rotations) - 1.0) / 2.0
    return np.arccos(np.clip(cos, -1.0, 1.0))


def dedup_grasps(poses: np.ndarray, translation_tol: float, angle_tol_deg: float) -> np.ndarray:
    """Greedy suppression in the given order; a grasp and its finger swap count as the same."""
    angle_tol = np.deg2rad(angle_tol_deg)
    kept: list[int] = []
    for i, pose in enumerate(poses):
        if kept:
            others = poses[kept]
            near = np.linalg.norm(others[:, :3, 3] - pose[:3, 3], axis=1) < translation_tol
            if near.any():
                candidates = others[near, :3, :3]
                angles = np.minimum(
                    rotation_angles(pose[:3, :3], candidates),
                    rotation_angles(pose[:3, :3] @ FLIP, candidates),
                )
                if np.any(angles < angle_tol):
                    continue
        kept.append(i)
    return np.asarray(kept, dtype=int)


def decode_object(
    decoder: SgdfDecoder,
    code: np.ndarray,
    grid: Optional[GridSpec] = None,
    params: Optional[PlanParams] = None,
) -> ReconstructedObject:
    grid = grid or GridSpec()
    params = params or PlanParams()
    points = grid.points()
    out = evaluate(decoder, code, points)
    band = np.abs(out["s"]) <= grid.band
    if not band.any():
        raise EmptyReconstructionError(f"no grid point within {grid.band:.5f} m of the surface")

    surface = points[band]
    order = np.argsort(np.abs(out["s"][band]), kind="stable")
    rotations, valid = gram_schmidt_batch(out["r1"][band][order], out["r2"][band][order])
    translations = surface[order] + out["delta_t"][band][order]
    poses = np.tile(np.eye(4), (int(valid.sum()), 1, 1))
    poses[:, :3, :3] = rotations[valid]
    poses[:, :3, 3] = translations[valid]
    kept = dedup_grasps(poses, params.dedup_translation, params.dedup_angle_deg)
    grasps = grasps_from_matrices(poses[kept], frame="object")
    logger.info(f"decoded {len(surface)} surface points, {len(poses)} grasps, {len(grasps)} after dedup")
    return ReconstructedObject(
        surface_points=PointCloud(points=surface),
        grasp_manifold=grasps,
        centroid=surface.mean(axis=0),
        has_grasps=bool(grasps),
    )


def transform_grasps(grasps: list[Grasp], pose: Pose, frame: GraspFrame = "camera") -> list[Grasp]:
    return grasps_from_matrices(pose.matrix @ stack_poses(grasps), frame=frame)


# ---- pose refinement ----------------------------------------------------------------

def outward_normals(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Plane-fit normals oriented away from the cloud centroid."""
    normals = estimate_normals(points, k=k)
    flip = np.sum(normals * (points - points.mean(axis=0)), axis=1) < 0
    normals[flip] *= -1.0
    return normals


def _correspond(source, source_normals, tree, cutoff, visible_only):
    candidates = np.ones(len(source), dtype=bool)
    if visible_only and source_normals is not None:
        candidates = np.sum(source_normals * -source, axis=1) > 0
    distance, index = tree.query(source, distance_upper_bound=cutoff)
    matched = candidates & np.isfinite(distance)
    return np.nonzero(matched)[0], index[matched]


def _point_to_plane(source, target, normals) -> np.ndarray:
    return np.sum((source - target) * normals, axis=1)


def _anchor_residual(pose: Pose, anchor: np.ndarray, tree: cKDTree, observed: np.ndarray, normals: np.ndarray) -> float:
    """Point-to-plane RMS of a fixed model subset against its nearest observed points."""
    source = pose.apply(anchor)
    _, index = tree.query(source)
    return float(np.sqrt(np.mean(_point_to_plane(source, observed[index], normals[index]) ** 2)))


def icp_trace(
    model: PointCloud,
    observed: PointCloud,
    init: Pose,
    params: Optional[IcpParams] = None,
) -> tuple[Pose, float, list[tuple[float, float]]]:
    """Point-to-plane ICP; also returns per accepted step the residual before and after.

    Residuals are measured on the model points matched at the first iteration, so the
    accepted sequence is comparable while the correspondence cutoff shrinks.
    """
    params = params or IcpParams()
    if len(model) == 0 or len(observed) == 0:
        raise EmptyCloudError("ICP needs two non-empty clouds")
    observed_normals = observed.normals
    if observed_normals is None or len(observed_normals) != len(observed):
        observed_normals = estimate_normals(observed.points)
    model_normals = outward_normals(model.points) if params.visible_only and len(model) >= 3 else None
    tree = cKDTree(observed.points)

    pose = init
    cutoff = params.cutoff
    history: list[tuple[float, float]] = []
    anchor = None
    residual = None
    for _ in range(params.max_iters):
        source = pose.apply(model.points)
        source_normals = None if model_normals is None else pose.apply_direction(model_normals)
        src_index, dst_index = _correspond(source, source_normals, tree, cutoff, params.visible_only)
        if len(src_index) < params.min_correspondences:
            raise TooFewCorrespondencesError(len(src_index), params.min_correspondences)
        if anchor is None:
            anchor = model.points[src_index]
            residual = _anchor_residual(pose, anchor, tree, observed.points, observed_normals)

        p = source[src_index]
        q = observed.points[dst_index]
        n = observed_normals[dst_index]
        A = np.hstack([np.cross(p, n), n])
        xi, *_ = np.linalg.lstsq(A, -_point_to_plane(p, q, n), rcond=None)
        step = Pose.trusted(Rotation.from_rotvec(xi[:3]).as_matrix(), xi[3:])
        candidate = step.compose(pose)
        after = _anchor_residual(candidate, anchor, tree, observed.points, observed_normals)
        if after > residual:
            break
        history.append((residual, after))
        pose = candidate
        residual = after
        if np.linalg.norm(xi) < params.tolerance:
            break
        cutoff = max(cutoff * params.cutoff_shrink, params.min_cutoff)

    return pose, float(residual), history


def refine_pose_icp(
    model: PointCloud,
    observed: PointCloud,
    init: Pose,
    params: Optional[IcpParams] = None,
) -> tuple[Pose, float]:
    pose, residual, _ = icp_trace(model, observed, init, params)
    return pose, residual


# ---- grasp filtering and selection -------------------------------------------------------

def filter_grasps(
    grasps: list[Grasp], scene: PointCloud, clearance: float, model: Optional[GripperModel] = None
) -> list[Grasp]:
    if not grasps:
        return []
    colliding = check_collision_points_batch(scene, stack_poses(grasps), clearance, model)
    return [g for g, hit in zip(grasps, colliding) if not hit]


def torque_scores(grasps: list[Grasp], centroid: np.ndarray, gravity_dir: np.ndarray) -> np.ndarray:
    """|(centroid - t) x g| per grasp: the gravity torque about the grasp point for unit mass."""
    if not grasps:
        return np.zeros(0)
    translations = stack_poses(grasps)[:, :3, 3]
    return np.linalg.norm(np.cross(np.asarray(centroid) - translations, np.asarray(gravity_dir)), axis=1)


def rank_grasps(grasps: list[Grasp], centroid: np.ndarray, gravity_dir: np.ndarray) -> tuple[list[Grasp], np.ndarray]:
    scores = torque_scores(grasps, centroid, gravity_dir)
    order = np.argsort(scores, kind="stable")
    return [grasps[i] for i in order], scores[order]


def select_grasp(grasps: list[Grasp], centroid: np.ndarray, gravity_dir: np.ndarray) -> tuple[Grasp, float]:
    if not grasps:
        raise NoGraspsError("no grasps to select from")
    check_same_frame(*grasps)
    scores = torque_scores(grasps, centroid, gravity_dir)
    best = int(np.argmin(scores))
    return grasps[best], float(scores[best])
