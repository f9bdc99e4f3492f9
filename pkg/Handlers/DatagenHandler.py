import logging
from typing import Optional

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from Handlers.GeometryHandler import (
    TriMesh,
    quantize,
    render_depth,
    rotation_about_z,
    sample_surface,
    mesh_sdf_batch,
)
from Handlers.GripperHandler import check_antipodal_batch, check_collision_mesh_batch
from Handlers.SeedHandler import derive_seed, make_rng
from Models.Dataset import GraspProvenance, GraspSet, ImageLabels, ObjectRecord, PlacedObject, SceneRecord, SgdfSamples
from Models.Errors import NoGraspsError
from Models.Geometry import CameraIntrinsics, DepthNoise
from Models.Gripper import Grasp, GripperModel, grasps_from_matrices, stack_poses
from Models.Pose import Pose
from Models.Training import LATENT_DIM

logger = logging.getLogger(__name__)

TABLE_THICKNESS = 0.02
TABLE_SIZE = 1.0
MIN_HEAT_VARIANCE = 4.0


# ---- grasp labels --------------------------------------------------------------

def approach_frame(approach: np.ndarray) -> np.ndarray:
    """Rotations whose z columns are the given unit approach directions."""
    approach = np.asarray(approach, dtype=np.float64).reshape(-1, 3)
    reference = np.tile([1.0, 0.0, 0.0], (len(approach), 1))
    reference[np.abs(approach[:, 0]) > 0.9] = [0.0, 1.0, 0.0]
    x = reference - np.sum(reference * approach, axis=1, keepdims=True) * approach
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.cross(approach, x)
    return np.stack([x, y, approach], axis=-1)


def generate_candidate_poses(
    mesh: TriMesh,
    n_points: int,
    n_rotations: int,
    seed: int,
    standoff: float = 0.01,
    model: Optional[GripperModel] = None,
) -> np.ndarray:
    """(n_points * n_rotations, 4, 4) candidates; rotation index varies fastest."""
    model = model or GripperModel.default()
    surface = sample_surface(mesh, n_points, seed=seed)
    approach = -surface.normals
    base = approach_frame(approach)
    spins = np.stack([rotation_about_z(2 * np.pi * k / n_rotations) for k in range(n_rotations)])
    rotations = np.einsum("pij,kjl->pkil", base, spins).reshape(-1, 3, 3)
    origins = quantize(surface.points - (model.finger_base + standoff) * approach)

    poses = np.tile(np.eye(4), (len(rotations), 1, 1))
    poses[:, :3, :3] = rotations
    poses[:, :3, 3] = np.repeat(origins, n_rotations, axis=0)
    return poses


def generate_candidates(
    mesh: TriMesh,
    n_points: int,
    n_rotations: int,
    seed: int,
    standoff: float = 0.01,
    model: Optional[GripperModel] = None,
) -> list[Grasp]:
    return grasps_from_matrices(generate_candidate_poses(mesh, n_points, n_rotations, seed, standoff, model))


def label_valid_grasps(
    mesh: TriMesh,
    candidates: list[Grasp] | np.ndarray,
    mu: float,
    clearance: float,
    object_id: str = "object",
    provenance: Optional[GraspProvenance] = None,
    model: Optional[GripperModel] = None,
) -> GraspSet:
    """Keeps antipodal candidates that clear the mesh; collisions only run on antipodal survivors."""
    poses = stack_poses(candidates) if isinstance(candidates, list) else np.asarray(candidates).reshape(-1, 4, 4)
    antipodal = check_antipodal_batch(mesh, poses, mu, model)
    survivors = poses[antipodal]
    free = ~check_collision_mesh_batch(mesh, survivors, clearance, model)
    valid = survivors[free]
    logger.info(f"{object_id}: {len(poses)} candidates, {int(antipodal.sum())} antipodal, {len(valid)} valid")
    if len(valid) == 0:
        logger.warning(f"{object_id}: no valid grasps")
    provenance = provenance or GraspProvenance(
        n_surface_points=0, n_rotations=0, mu=mu, clearance=clearance
    )
    return GraspSet(object_id=object_id, poses=valid, provenance=provenance)


# ---- SGDF samples ----------------------------------------------------------------

def nearest_grasp_index(translations: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the grasp with the nearest translation; ties resolve to the lowest index."""
    unique, first = np.unique(translations, axis=0, return_index=True)
    tree = cKDTree(unique)
    distance, nearest = tree.query(points)
    index = first[nearest]
    tied = tree.query_ball_point(points, distance * (1.0 + 1e-9) + 1e-12)
    for i, candidates in enumerate(tied):
        if len(candidates) > 1:
            index[i] = first[candidates].min()
    return index


def sample_query_points(
    mesh: TriMesh, n_samples: int, seed: int, near_fraction: float = 0.8, sigma: float = 0.025, bbox_scale: float = 1.5
) -> np.ndarray:
    rng = make_rng(seed, "sgdf-points")
    n_near = int(round(near_fraction * n_samples))
    near = np.zeros((0, 3))
    if n_near:
        surface, _ = trimesh.sample.sample_surface(mesh, n_near, seed=derive_seed(seed, "sgdf-surface"))
        near = surface + rng.normal(0.0, sigma, size=surface.shape)
    lower, upper = mesh.bounds
    center, half = (lower + upper) / 2, bbox_scale * (upper - lower) / 2
    uniform = rng.uniform(center - half, center + half, size=(n_samples - n_near, 3))
    return quantize(np.concatenate([near, uniform]))


def sample_sgdf(
    mesh: TriMesh,
    grasp_set: GraspSet,
    n_samples: int,
    seed: int,
    near_fraction: float = 0.8,
    sigma: float = 0.025,
    bbox_scale: float = 1.5,
) -> SgdfSamples:
    if len(grasp_set) == 0:
        raise NoGraspsError(f"{grasp_set.object_id}: cannot label SGDF samples without grasps")
    x = sample_query_points(mesh, n_samples, seed, near_fraction, sigma, bbox_scale)
    s = mesh_sdf_batch(mesh, x)
    nearest = nearest_grasp_index(grasp_set.translations, x)
    chosen = grasp_set.poses[nearest]
    return SgdfSamples(x=x, s=s, delta_t=chosen[:, :3, 3] - x, rotation=chosen[:, :3, :3])


# ---- scenes ----------------------------------------------------------------------

def draw_object_count(rng: np.random.Generator, lam: float = 4.0, low: int = 1, high: int = 6) -> int:
    return int(np.clip(rng.poisson(lam), low, high))


def make_packed_scene(
    library: list[ObjectRecord],
    seed: int,
    scene_id: Optional[str] = None,
    workspace: tuple[float, float, float, float] = (-0.15, 0.15, -0.15, 0.15),
    lam: float = 4.0,
    count_range: tuple[int, int] = (1, 6),
    max_tries: int = 100,
) -> SceneRecord:
    """Upright objects with uniform yaw, rejection-sampled against footprint overlap."""
    if not library:
        raise ValueError("library is empty")
    rng = make_rng(seed, "packed-scene")
    count = draw_object_count(rng, lam, *count_range)
    x_min, x_max, y_min, y_max = workspace

    placed: list[PlacedObject] = []
    for _ in range(count):
        record = library[int(rng.integers(len(library)))]
        r = record.footprint_radius
        for _ in range(max_tries):
            xy = rng.uniform((x_min + r, y_min + r), (x_max - r, y_max - r))
            yaw = rng.uniform(0.0, 2 * np.pi)
            if all(np.linalg.norm(xy - p.pose.translation[:2]) >= r + p.footprint_radius for p in placed):
                pose = Pose.trusted(rotation_about_z(yaw), np.array([xy[0], xy[1], record.base_offset]))
                placed.append(PlacedObject(object_id=record.object_id, pose=pose, footprint_radius=r))
                break
        else:
            logger.info(f"dropping {record.object_id}: no free spot after {max_tries} tries")

    return SceneRecord(scene_id=scene_id or f"scene-{seed}", objects=placed, workspace=workspace, seed=seed)


def table_mesh(scene: SceneRecord) -> tuple[TriMesh, Pose]:
    slab = trimesh.creation.box(extents=(TABLE_SIZE, TABLE_SIZE, TABLE_THICKNESS))
    return slab, Pose.trusted(np.eye(3), np.array([0.0, 0.0, scene.table_z - TABLE_THICKNESS / 2]))


def scene_meshes(scene: SceneRecord, library: dict[str, ObjectRecord], include_table: bool = True):
    meshes = [(library[o.object_id].mesh, o.pose) for o in scene.objects]
    if include_table:
        meshes.append(table_mesh(scene))
    return meshes


def render_scene(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    camera: CameraIntrinsics,
    camera_pose: Pose,
    noise: Optional[DepthNoise] = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Depth and instance map; the table reads as background."""
    depth, instance = render_depth(scene_meshes(scene, library), camera, camera_pose, noise, seed)
    instance[instance == len(scene.objects)] = -1
    return depth, instance


def mask_gaussian(mask: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Unit-peak Gaussian at the rounded mask centroid, covariance from the mask's second moments."""
    rows, cols = np.nonzero(mask)
    pixels = np.column_stack([cols, rows]).astype(np.float64)
    centroid = pixels.mean(axis=0)
    center = np.rint(centroid).astype(int)
    height, width = mask.shape
    center = np.clip(center, 0, [width - 1, height - 1])
    covariance = np.cov(pixels.T, bias=True) / 4 if len(pixels) > 1 else np.zeros((2, 2))
    values, vectors = np.linalg.eigh(covariance)
    values = np.maximum(values, MIN_HEAT_VARIANCE)
    precision = vectors @ np.diag(1.0 / values) @ vectors.T

    v, u = np.mgrid[0:height, 0:width]
    d = np.stack([u - center[0], v - center[1]], axis=-1).astype(np.float64)
    heat = np.exp(-0.5 * np.einsum("hwi,ij,hwj->hw", d, precision, d))
    return heat, (int(center[0]), int(center[1]))


def render_labels(
    scene: SceneRecord,
    library: dict[str, ObjectRecord],
    camera: CameraIntrinsics,
    camera_pose: Pose,
    code_lookup: dict[str, np.ndarray],
    noise: Optional[DepthNoise] = None,
    seed: int = 0,
) -> tuple[np.ndarray, ImageLabels]:
    missing = [o.object_id for o in scene.objects if o.object_id not in code_lookup]
    if missing:
        raise KeyError(f"no latent code for {missing}")
    depth, instance = render_scene(scene, library, camera, camera_pose, noise, seed)
    shape = (camera.height, camera.width)
    code_dim = len(next(iter(code_lookup.values()))) if code_lookup else LATENT_DIM
    heatmap = np.zeros(shape)
    pose_map = np.zeros(shape + (12,))
    code_map = np.zeros(shape + (code_dim,))
    world_to_camera = camera_pose.inverse()

    visible, centers = [], []
    for index, placed in enumerate(scene.objects):
        mask = instance == index
        if not mask.any():
            logger.warning(f"{scene.scene_id}: object {index} ({placed.object_id}) not visible, omitted")
            continue
        heat, center = mask_gaussian(mask)
        heatmap = np.maximum(heatmap, heat)
        pose_map[mask] = world_to_camera.compose(placed.pose).flat12()
        code_map[mask] = np.asarray(code_lookup[placed.object_id])
        visible.append(index)
        centers.append(center)

    labels = ImageLabels(
        heatmap=heatmap,
        pose_map=pose_map,
        code_map=code_map,
        instance_masks=instance,
        visible=visible,
        centers=centers,
    )
    return depth, labels
