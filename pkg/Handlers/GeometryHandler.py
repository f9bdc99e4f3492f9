import logging
from pathlib import Path
from typing import Optional

import numpy as np
import trimesh
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from Models.Errors import DegenerateRotationError, EmptyMeshError, SdfUndefinedError
from Models.Geometry import CameraIntrinsics, DepthNoise, GridBounds, PointCloud, VoxelGrid
from Models.Pose import Pose

logger = logging.getLogger(__name__)

TriMesh = trimesh.Trimesh

DEGENERATE_AREA = 1e-12
EMPTY_DEPTH = 0.0
BACKGROUND = -1
# positions snapped to this lattice add and subtract exactly in float32 and float64
DYADIC_STEP = 2.0 ** -20
MIN_NORM = 1e-9
MIN_ANGLE = 1e-4

# odd count so the parity vote never ties; none axis-aligned
SIGN_DIRECTIONS = np.array([
    [0.5773, 0.5774, 0.5775],
    [-0.6234, 0.5193, 0.5845],
    [0.3141, -0.8829, 0.3489],
    [0.1123, 0.2781, -0.9540],
    [-0.7071, -0.4123, -0.5745],
    [0.9127, 0.1357, -0.3853],
    [-0.2113, 0.9651, -0.1548],
    [0.4472, -0.3337, 0.8297],
    [-0.8944, -0.0912, 0.4378],
])
SIGN_DIRECTIONS = SIGN_DIRECTIONS / np.linalg.norm(SIGN_DIRECTIONS, axis=1, keepdims=True)


def make_transform(t, R) -> Pose:
    return Pose(rotation=R, translation=t)


def gram_schmidt_rotation(r1, r2) -> np.ndarray:
    r1 = np.asarray(r1, dtype=np.float64).reshape(3)
    r2 = np.asarray(r2, dtype=np.float64).reshape(3)
    n1 = np.linalg.norm(r1)
    n2 = np.linalg.norm(r2)
    if n1 < MIN_NORM or n2 < MIN_NORM:
        raise DegenerateRotationError("rotation component is near zero")
    if np.linalg.norm(np.cross(r1, r2)) / (n1 * n2) < np.sin(MIN_ANGLE):
        raise DegenerateRotationError("rotation components are near parallel")
    b1 = r1 / n1
    u2 = r2 - np.dot(b1, r2) * b1
    b2 = u2 / np.linalg.norm(u2)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def gram_schmidt_batch(r1: np.ndarray, r2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Gram-Schmidt; returns rotations and a validity mask."""
    n1 = np.linalg.norm(r1, axis=1)
    n2 = np.linalg.norm(r2, axis=1)
    sin = np.linalg.norm(np.cross(r1, r2), axis=1) / np.maximum(n1 * n2, MIN_NORM ** 2)
    valid = (n1 >= MIN_NORM) & (n2 >= MIN_NORM) & (sin >= np.sin(MIN_ANGLE))
    b1 = r1 / np.maximum(n1, MIN_NORM)[:, None]
    u2 = r2 - np.sum(b1 * r2, axis=1, keepdims=True) * b1
    b2 = u2 / np.maximum(np.linalg.norm(u2, axis=1), MIN_NORM)[:, None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1), valid


def procrustes_project(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64).reshape(3, 3)
    U, S, Vt = np.linalg.svd(M)
    if S.min() <= MIN_NORM:
        raise DegenerateRotationError("matrix is rank deficient")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def project_rotations(M: np.ndarray) -> np.ndarray:
    """Batched Procrustes projection without the rank check."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    correction = np.tile(np.eye(3), (len(M), 1, 1))
    correction[:, 2, 2] = d
    return U @ correction @ Vt


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def quantize(points: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(points, dtype=np.float64) / DYADIC_STEP) * DYADIC_STEP


# ---- meshes -----------------------------------------------------------------

def clean_mesh(mesh: TriMesh) -> TriMesh:
    """Copy without degenerate triangles; watertightness is recomputed by trimesh."""
    mesh = mesh.copy()
    keep = mesh.area_faces >= DEGENERATE_AREA
    if not keep.all():
        logger.info(f"dropping {int((~keep).sum())} degenerate triangles")
        mesh.update_faces(keep)
        mesh.remove_unreferenced_vertices()
    return mesh


def load_mesh(path: str | Path) -> TriMesh:
    """ASCII OBJ or binary PLY, vertices merged so watertightness is meaningful."""
    mesh = trimesh.load(str(path), force="mesh", process=True)
    if len(mesh.faces) == 0:
        raise EmptyMeshError(f"{path} has no triangles")
    return clean_mesh(mesh)


def _count_hits(mesh: TriMesh, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
    directions = np.broadcast_to(direction, origins.shape)
    _, index_ray, locations = mesh.ray.intersects_id(
        origins, directions, multiple_hits=True, return_locations=True
    )
    if len(index_ray) == 0:
        return np.zeros(len(origins), dtype=int)
    # a ray through a shared edge reports both triangles at one location
    keys = np.column_stack([index_ray, np.round(locations / 1e-9)])
    unique_rays = np.unique(keys, axis=0)[:, 0].astype(int)
    return np.bincount(unique_rays, minlength=len(origins))


def mesh_contains(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    """Majority vote of ray-parity tests along the fixed sign directions."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    votes = np.zeros(len(points), dtype=int)
    for direction in SIGN_DIRECTIONS:
        votes += _count_hits(mesh, points, direction) % 2
    return votes * 2 > len(SIGN_DIRECTIONS)


def mesh_sdf_batch(mesh: TriMesh, queries: np.ndarray) -> np.ndarray:
    if not mesh.is_watertight:
        raise SdfUndefinedError("signed distance needs a watertight mesh")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(queries) == 0:
        return np.zeros(0)
    _, distance, _ = trimesh.proximity.closest_point(mesh, queries)
    inside = mesh_contains(mesh, queries)
    return np.where(inside, -distance, distance)


def mesh_sdf(mesh: TriMesh, query) -> float:
    return float(mesh_sdf_batch(mesh, np.asarray(query).reshape(1, 3))[0])


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    if len(mesh.faces) == 0:
        raise EmptyMeshError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be at least 1")
    points, face_index = trimesh.sample.sample_surface(mesh, n, seed=seed)
    return PointCloud(points=points, normals=mesh.face_normals[face_index])


# ---- cameras ----------------------------------------------------------------

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose in the world frame looking from eye to target, image up along up."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(forward, up)) < 1e-6:
        up = np.array([0.0, 1.0, 0.0]) if abs(forward[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(rotation=np.column_stack([right, down, forward]), translation=eye)


def pixel_rays(camera: CameraIntrinsics) -> np.ndarray:
    """(H*W, 3) camera-frame directions with z = 1 through pixel centers, row-major."""
    v, u = np.mgrid[0:camera.height, 0:camera.width]
    x = (u.reshape(-1) + 0.5 - camera.cx) / camera.fx
    y = (v.reshape(-1) + 0.5 - camera.cy) / camera.fy
    return np.column_stack([x, y, np.ones_like(x)])


def apply_depth_noise(depth: np.ndarray, noise: Optional[DepthNoise], seed: int = 0) -> np.ndarray:
    """Gaussian noise and dropout on valid pixels only; empty pixels stay empty."""
    if noise is None or (noise.sigma == 0 and noise.dropout == 0):
        return depth
    rng = np.random.default_rng(seed)
    hit = depth > 0
    noisy = depth + np.where(hit, rng.normal(0.0, noise.sigma, depth.shape), 0.0)
    dropped = hit & (rng.random(depth.shape) < noise.dropout)
    noisy[dropped | (hit & (noisy <= 0))] = EMPTY_DEPTH
    return noisy


def render_depth(
    meshes: list[tuple[TriMesh, Pose]],
    camera: CameraIntrinsics,
    camera_pose: Pose,
    noise: Optional[DepthNoise] = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast z-depth (0 where empty) and instance map (-1 where background)."""
    shape = (camera.height, camera.width)
    if not meshes:
        return np.full(shape, EMPTY_DEPTH), np.full(shape, BACKGROUND, dtype=np.int32)
    world_to_camera = camera_pose.inverse()
    vertices, faces, owner = [], [], []
    offset = 0
    for index, (mesh, pose) in enumerate(meshes):
        vertices.append(world_to_camera.apply(pose.apply(mesh.vertices)))
        faces.append(np.asarray(mesh.faces) + offset)
        owner.append(np.full(len(mesh.faces), index))
        offset += len(mesh.vertices)
    scene = trimesh.Trimesh(np.concatenate(vertices), np.concatenate(faces), process=False)
    face_owner = np.concatenate(owner)

    directions = pixel_rays(camera)
    origins = np.zeros_like(directions)
    depth = np.full(len(directions), EMPTY_DEPTH)
    instance = np.full(len(directions), BACKGROUND, dtype=np.int32)
    index_tri, index_ray, locations = scene.ray.intersects_id(
        origins, directions, multiple_hits=False, return_locations=True
    )
    in_front = locations[:, 2] > 0 if len(locations) else np.zeros(0, dtype=bool)
    depth[index_ray[in_front]] = locations[in_front, 2]
    instance[index_ray[in_front]] = face_owner[index_tri[in_front]]
    return apply_depth_noise(depth.reshape(shape), noise, seed), instance.reshape(shape)


def depth_to_cloud(depth: np.ndarray, camera: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Back-projected camera-frame points and their (row, col) pixels."""
    rows, cols = np.nonzero(depth > 0)
    z = depth[rows, cols]
    x = (cols + 0.5 - camera.cx) / camera.fx * z
    y = (rows + 0.5 - camera.cy) / camera.fy * z
    return np.column_stack([x, y, z]), np.column_stack([rows, cols])


def estimate_normals(points: np.ndarray, k: int = 10, viewpoint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Plane-fit normals from k nearest neighbors, oriented toward the viewpoint."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        raise ValueError("normal estimation needs at least 3 points")
    k = min(k, len(points))
    _, neighbors = cKDTree(points).query(points, k=k)
    local = points[neighbors] - points[neighbors].mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", local, local) / k
    _, vectors = np.linalg.eigh(covariance)
    normals = vectors[:, :, 0]
    facing = np.sum(normals * (np.asarray(viewpoint) - points), axis=1) < 0
    normals[facing] *= -1.0
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def observation_cloud(depth: np.ndarray, camera: CameraIntrinsics, k: int = 10) -> PointCloud:
    points, _ = depth_to_cloud(depth, camera)
    if len(points) < 3:
        return PointCloud(points=points, normals=np.zeros((0, 3)) if len(points) == 0 else None)
    return PointCloud(points=points, normals=estimate_normals(points, k=k))


def voxelize(points: PointCloud, grid: GridBounds) -> VoxelGrid:
    occupancy = np.zeros(grid.dims, dtype=bool)
    if len(points.points):
        index = np.floor((points.points - grid.origin) / grid.spacing).astype(np.int64)
        inside = np.all((index >= 0) & (index < np.asarray(grid.dims)), axis=1)
        index = index[inside]
        occupancy[index[:, 0], index[:, 1], index[:, 2]] = True
    return VoxelGrid(origin=grid.origin, spacing=grid.spacing, dims=grid.dims, occupancy=occupancy)
