import logging
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.spatial.transform import Rotation

from Handlers.DatagenHandler import render_labels
from Handlers.GeometryHandler import procrustes_project, project_rotations
from Handlers.SeedHandler import make_rng
from Models.Dataset import ImageLabels, ObjectRecord, SceneRecord
from Models.Errors import DegenerateRotationError, DimensionMismatchError
from Models.Geometry import CameraIntrinsics
from Models.Percept import Detection, EncoderLoss, EncoderLossWeights, EncoderMaps, EncoderNoise
from Models.Pose import Pose

logger = logging.getLogger(__name__)

POSE_POINT_DISTANCE = 0.1


def extract_peaks(heatmap: np.ndarray, threshold: float = 0.4, window: int = 5) -> list[tuple[int, int, float]]:
    """Strict local maxima of a (2w+1)^2 window above threshold, as (u, v, value), strongest first."""
    footprint = np.ones((2 * window + 1, 2 * window + 1), dtype=bool)
    footprint[window, window] = False
    neighbors = maximum_filter(heatmap, footprint=footprint, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero((heatmap > neighbors) & (heatmap >= threshold))
    values = heatmap[rows, cols]
    order = np.argsort(-values, kind="stable")

    kept: list[tuple[int, int, float]] = []
    for i in order:
        u, v = int(cols[i]), int(rows[i])
        if all(np.hypot(u - ku, v - kv) >= window for ku, kv, _ in kept):
            kept.append((u, v, float(values[i])))
    return kept


def decode_detections(
    heatmap: np.ndarray,
    pose_map: np.ndarray,
    code_map: np.ndarray,
    threshold: float = 0.4,
    window: int = 5,
) -> list[Detection]:
    if pose_map.shape[:2] != heatmap.shape or code_map.shape[:2] != heatmap.shape:
        raise DimensionMismatchError("heatmap, pose map and code map differ in size")
    detections = []
    for u, v, value in extract_peaks(heatmap, threshold, window):
        matrix = pose_map[v, u].reshape(3, 4)
        try:
            rotation = procrustes_project(matrix[:, :3])
        except DegenerateRotationError:
            logger.warning(f"dropping detection at ({u}, {v}): degenerate pose")
            continue
        detections.append(
            Detection(
                pixel=(u, v),
                objectness=min(value, 1.0),
                pose=Pose(rotation=rotation, translation=matrix[:, 3]),
                code=np.array(code_map[v, u], copy=True),
            )
        )
    return detections


def canonical_pose_points(d: float = POSE_POINT_DISTANCE) -> np.ndarray:
    return np.vstack([np.zeros(3), d * np.eye(3)])


def pose_points(pose: Pose, d: float = POSE_POINT_DISTANCE) -> np.ndarray:
    return pose.apply(canonical_pose_points(d))


def encoder_loss(
    pred: EncoderMaps, gt: ImageLabels, weights: Optional[EncoderLossWeights] = None
) -> EncoderLoss:
    weights = weights or EncoderLossWeights()
    if (
        pred.heatmap.shape != gt.heatmap.shape
        or pred.pose_map.shape != gt.pose_map.shape
        or pred.code_map.shape != gt.code_map.shape
    ):
        raise DimensionMismatchError("predicted and ground-truth maps differ in shape")

    l_heat = float(np.mean((pred.heatmap - gt.heatmap) ** 2))
    mask = gt.instance_masks >= 0
    pixel_weights = gt.heatmap[mask]
    weight_sum = float(pixel_weights.sum())
    l_pose = l_shape = 0.0
    if mask.any() and weight_sum > 0:
        canonical = canonical_pose_points()

        def points(pose_rows: np.ndarray) -> np.ndarray:
            matrices = pose_rows.reshape(-1, 3, 4)
            rotations = project_rotations(matrices[:, :, :3])
            return np.einsum("nij,kj->nki", rotations, canonical) + matrices[:, None, :, 3]

        distances = np.linalg.norm(points(pred.pose_map[mask]) - points(gt.pose_map[mask]), axis=2).mean(axis=1)
        l_pose = float(np.sum(pixel_weights * distances) / weight_sum)
        code_error = np.abs(pred.code_map[mask] - gt.code_map[mask]).mean(axis=1)
        l_shape = float(np.sum(pixel_weights * code_error) / weight_sum)

    total = weights.heat * l_heat + weights.pose * l_pose + weights.shape * l_shape
    return EncoderLoss(heat=l_heat, pose=l_pose, shape=l_shape, total=total)


def perturb_pose(pose: Pose, noise: EncoderNoise, rng: np.random.Generator) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, noise.sigma_rot) if noise.sigma_rot > 0 else 0.0
    offset = rng.normal(0.0, noise.sigma_trans, size=3) if noise.sigma_trans > 0 else np.zeros(3)
    rotation = pose.rotation if angle == 0.0 else Rotation.from_rotvec(angle * axis).as_matrix() @ pose.rotation
    return Pose.trusted(rotation, pose.translation + offset)


def oracle_encoder(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    camera: CameraIntrinsics,
    camera_pose: Pose,
    code_lookup: dict[str, np.ndarray],
    noise: Optional[EncoderNoise] = None,
    seed: int = 0,
    labels: Optional[ImageLabels] = None,
) -> EncoderMaps:
    """Ground-truth maps with per-object pose and code perturbations; stands in for a learned encoder."""
    noise = noise or EncoderNoise()
    if labels is None:
        _, labels = render_labels(scene, library, camera, camera_pose, code_lookup)
    pose_map = labels.pose_map.copy()
    code_map = labels.code_map.copy()
    world_to_camera = camera_pose.inverse()

    for index in labels.visible:
        placed = scene.objects[index]
        rng = make_rng(seed, "oracle-encoder", scene.scene_id, index)
        pose = perturb_pose(world_to_camera.compose(placed.pose), noise, rng)
        code = np.asarray(code_lookup[placed.object_id], dtype=np.float64)
        if noise.sigma_code > 0:
            code = code + rng.normal(0.0, noise.sigma_code, size=code.shape)
        mask = labels.instance_masks == index
        pose_map[mask] = pose.flat12()
        code_map[mask] = code
    return EncoderMaps(heatmap=labels.heatmap.copy(), pose_map=pose_map, code_map=code_map)
