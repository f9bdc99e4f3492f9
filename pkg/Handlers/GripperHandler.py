import logging
from pathlib import Path
from typing import Optional

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from Handlers.GeometryHandler import TriMesh, mesh_contains
from Models.Errors import ConfigError
from Models.Geometry import PointCloud
from Models.Gripper import ContactPair, Grasp, GripperModel, stack_poses

logger = logging.getLogger(__name__)

RAYS_PER_FINGER = 3
TIE_TOLERANCE = 1e-9

CONFIG_KEYS = {
    "max_opening",
    "finger_depth",
    "finger_offset",
    "finger_base",
    "finger_thickness",
    "finger_width",
    "palm_half_extents",
}


def control_point_sets(model: GripperModel) -> tuple[np.ndarray, np.ndarray]:
    """Homogeneous control points column-wise (4x5) and their finger-swapped copy."""
    V = np.vstack([model.control_points.T, np.ones((1, len(model.control_points)))])
    V_flipped = np.diag([-1.0, -1.0, 1.0, 1.0]) @ V
    return V, V_flipped


def load_gripper_config(path: str | Path) -> GripperModel:
    """Reads `key = value` lines; anything not given keeps its compiled-in default."""
    values: dict[str, float | tuple[float, ...]] = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected `key = value`")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{number}: unknown gripper key {key!r}")
        try:
            numbers = [float(v) for v in value.replace(",", " ").split()]
        except ValueError as e:
            raise ConfigError(f"{path}:{number}: {key} is not numeric") from e
        expected = 3 if key == "palm_half_extents" else 1
        if len(numbers) != expected:
            raise ConfigError(f"{path}:{number}: {key} takes {expected} value(s)")
        values[key] = tuple(numbers) if expected == 3 else numbers[0]

    try:
        return GripperModel.from_dimensions(**values)
    except ValueError as e:
        raise ConfigError(f"{path}: invalid gripper: {e}") from e


# ---- antipodality -------------------------------------------------------------

def _finger_rays(model: GripperModel) -> tuple[np.ndarray, np.ndarray]:
    """Gripper-frame ray origins and directions, center ray first on each finger."""
    z_center = model.window_center[2]
    offsets = [0.0, -model.finger_depth / 3, model.finger_depth / 3][:RAYS_PER_FINGER]
    origins, directions = [], []
    for side in (1.0, -1.0):
        for dz in offsets:
            origins.append([side * model.finger_offset, 0.0, z_center + dz])
            directions.append([-side, 0.0, 0.0])
    return np.array(origins), np.array(directions)


def _pick_contacts(hit: np.ndarray, distance: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per row, the hit nearest the grasp center; near-ties go to the lowest ray index."""
    masked = np.where(hit, distance, np.inf)
    best = masked.min(axis=1)
    near = hit & (masked <= best[:, None] + TIE_TOLERANCE)
    return near.argmax(axis=1), hit.any(axis=1)


def antipodal_contacts(mesh: TriMesh, poses: np.ndarray, mu: float, model: Optional[GripperModel] = None):
    """Vectorized antipodal test over (N, 4, 4) poses in the mesh frame.

    Returns the verdicts and the chosen contacts (c1, c2, n1, n2), NaN where a finger found nothing.
    """
    model = model or GripperModel.default()
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 4, 4)
    n = len(poses)
    local_origins, local_dirs = _finger_rays(model)
    k = len(local_origins)
    rotations = poses[:, :3, :3]
    origins = np.einsum("nij,kj->nki", rotations, local_origins) + poses[:, None, :3, 3]
    directions = np.einsum("nij,kj->nki", rotations, local_dirs)

    locations = np.full((n * k, 3), np.nan)
    normals = np.full((n * k, 3), np.nan)
    if n:
        index_tri, index_ray, hit_locations = mesh.ray.intersects_id(
            origins.reshape(-1, 3), directions.reshape(-1, 3), multiple_hits=False, return_locations=True
        )
        locations[index_ray] = np.reshape(hit_locations, (-1, 3))
        normals[index_ray] = mesh.face_normals[index_tri]
    locations = locations.reshape(n, k, 3)
    normals = normals.reshape(n, k, 3)

    travel = np.einsum("nki,nki->nk", locations - origins, directions)
    facing = np.einsum("nki,nki->nk", normals, directions) < 0
    hit = np.isfinite(travel) & (travel <= 2 * model.finger_offset) & facing
    center = poses[:, :3, :3] @ model.window_center + poses[:, :3, 3]
    distance = np.linalg.norm(locations - center[:, None, :], axis=2)

    half = k // 2
    first, has_first = _pick_contacts(hit[:, :half], distance[:, :half])
    second, has_second = _pick_contacts(hit[:, half:], distance[:, half:])
    rows = np.arange(n)
    c1, n1 = locations[rows, first], normals[rows, first]
    c2, n2 = locations[rows, half + second], normals[rows, half + second]

    separation = np.linalg.norm(c2 - c1, axis=1)
    cone = np.cos(np.arctan(mu))
    with np.errstate(invalid="ignore", divide="ignore"):
        d = (c2 - c1) / separation[:, None]
        ok = (
            has_first
            & has_second
            & (separation > 0)
            & (separation <= model.max_opening)
            & (np.sum(d * -n1, axis=1) >= cone)
            & (np.sum(d * n2, axis=1) >= cone)
        )
    return ok, (c1, c2, n1, n2)


def check_antipodal_batch(mesh: TriMesh, poses: np.ndarray, mu: float, model: Optional[GripperModel] = None) -> np.ndarray:
    ok, _ = antipodal_contacts(mesh, poses, mu, model)
    return ok


def check_antipodal(
    mesh: TriMesh, grasp: Grasp, mu: float, model: Optional[GripperModel] = None
) -> tuple[bool, Optional[ContactPair]]:
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    ok, (c1, c2, n1, n2) = antipodal_contacts(mesh, grasp.pose.matrix[None], mu, model)
    if not np.all(np.isfinite([c1[0], c2[0], n1[0], n2[0]])):
        return False, None
    return bool(ok[0]), ContactPair(c1=c1[0], c2=c2[0], n1=n1[0], n2=n2[0])


# ---- collisions -----------------------------------------------------------------

def box_transforms(model: GripperModel, pose: np.ndarray) -> list[np.ndarray]:
    return [pose @ box.pose.matrix for box in model.collision_boxes]


def box_corners(model: GripperModel, pose: np.ndarray, clearance: float = 0.0) -> np.ndarray:
    """(8 * n_boxes, 3) corners of the inflated boxes under `pose`."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    corners = []
    for box, transform in zip(model.collision_boxes, box_transforms(model, pose)):
        local = signs * (box.half_extents + clearance)
        corners.append(local @ transform[:3, :3].T + transform[:3, 3])
    return np.concatenate(corners)


def check_collision_mesh_batch(
    mesh: TriMesh, poses: np.ndarray, clearance: float, model: Optional[GripperModel] = None
) -> np.ndarray:
    """True where any inflated gripper box touches the mesh."""
    model = model or GripperModel.default()
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 4, 4)
    if len(poses) == 0:
        return np.zeros(0, dtype=bool)

    manager = trimesh.collision.CollisionManager()
    manager.add_object("object", mesh)
    boxes = [trimesh.creation.box(extents=2 * (box.half_extents + clearance)) for box in model.collision_boxes]

    colliding = np.zeros(len(poses), dtype=bool)
    for i, pose in enumerate(poses):
        for box_mesh, transform in zip(boxes, box_transforms(model, pose)):
            if manager.in_collision_single(box_mesh, transform=transform):
                colliding[i] = True
                break

    # a box swallowed by the mesh, or the mesh swallowed by a box, has no crossing triangles
    centers = np.stack([np.stack(box_transforms(model, pose))[:, :3, 3] for pose in poses])
    swallowed = mesh_contains(mesh, centers.reshape(-1, 3)).reshape(len(poses), -1).any(axis=1)
    anchor = PointCloud(points=mesh.vertices[:1])
    engulfing = check_collision_points_batch(anchor, poses, clearance, model)
    return colliding | swallowed | engulfing


def check_collision_mesh(mesh: TriMesh, grasp: Grasp, clearance: float, model: Optional[GripperModel] = None) -> bool:
    return bool(check_collision_mesh_batch(mesh, grasp.pose.matrix[None], clearance, model)[0])


def _bounding_sphere(model: GripperModel, clearance: float) -> tuple[np.ndarray, float]:
    corners = box_corners(model, np.eye(4), clearance)
    center = 0.5 * (corners.min(axis=0) + corners.max(axis=0))
    return center, float(np.linalg.norm(corners - center, axis=1).max())


def points_in_boxes(points: np.ndarray, pose: np.ndarray, clearance: float, model: GripperModel) -> bool:
    for box, transform in zip(model.collision_boxes, box_transforms(model, pose)):
        local = (points - transform[:3, 3]) @ transform[:3, :3]
        if np.any(np.all(np.abs(local) < box.half_extents + clearance, axis=1)):
            return True
    return False


def check_collision_points_batch(
    cloud: PointCloud, poses: np.ndarray, clearance: float, model: Optional[GripperModel] = None
) -> np.ndarray:
    """True where any cloud point is strictly inside an inflated gripper box."""
    model = model or GripperModel.default()
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 4, 4)
    colliding = np.zeros(len(poses), dtype=bool)
    if len(cloud) == 0 or len(poses) == 0:
        return colliding

    tree = cKDTree(cloud.points)
    center, radius = _bounding_sphere(model, clearance)
    world_centers = poses[:, :3, :3] @ center + poses[:, :3, 3]
    nearby = tree.query_ball_point(world_centers, r=radius + 1e-9)
    for i, index in enumerate(nearby):
        if index:
            colliding[i] = points_in_boxes(cloud.points[index], poses[i], clearance, model)
    return colliding


def check_collision_points(cloud: PointCloud, grasp: Grasp, clearance: float, model: Optional[GripperModel] = None) -> bool:
    return bool(check_collision_points_batch(cloud, stack_poses([grasp]), clearance, model)[0])
