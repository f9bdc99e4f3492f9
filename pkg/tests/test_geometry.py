import numpy as np
import pytest
import trimesh

from Handlers.GeometryHandler import (
    DYADIC_STEP,
    apply_depth_noise,
    depth_to_cloud,
    estimate_normals,
    gram_schmidt_rotation,
    look_at,
    make_transform,
    mesh_contains,
    mesh_sdf,
    mesh_sdf_batch,
    procrustes_project,
    quantize,
    random_rotation,
    render_depth,
    sample_surface,
    voxelize,
)
from Handlers.ObjectLibrary import builtin_library
from Models.Errors import DegenerateRotationError, EmptyMeshError, InvalidRotationError, SdfUndefinedError
from Models.Geometry import CameraIntrinsics, DepthNoise, GridBounds, PointCloud
from Models.Pose import Pose


def _is_rotation(R: np.ndarray) -> bool:
    return np.allclose(R.T @ R, np.eye(3), atol=1e-9) and np.isclose(np.linalg.det(R), 1.0)


def test_pose_rejects_scaled_and_reflected_rotations():
    with pytest.raises(InvalidRotationError):
        Pose(rotation=2 * np.eye(3), translation=np.zeros(3))
    with pytest.raises(InvalidRotationError):
        Pose(rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3))
    with pytest.raises(InvalidRotationError):
        Pose(rotation=np.eye(3), translation=[0.0, np.nan, 0.0])
    with pytest.raises(InvalidRotationError):
        make_transform([0.0, 0.0, 0.0], np.diag([1.0, 1.0, -1.0]))
    pose = make_transform([0.1, 0.0, 0.2], np.eye(3))
    assert np.array_equal(pose.matrix[:3, 3], [0.1, 0.0, 0.2])


def test_pose_compose_with_inverse_is_identity(rng):
    pose = Pose(rotation=random_rotation(rng), translation=rng.normal(size=3))
    roundtrip = pose.compose(pose.inverse())
    assert np.allclose(roundtrip.matrix, np.eye(4), atol=1e-12)
    points = rng.normal(size=(5, 3))
    assert np.allclose(pose.inverse().apply(pose.apply(points)), points)


def test_pose_flat12_is_row_major():
    pose = Pose(rotation=np.eye(3), translation=[1.0, 2.0, 3.0])
    assert pose.flat12().tolist() == [1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3]


def test_gram_schmidt_keeps_first_axis():
    R = gram_schmidt_rotation([2.0, 0.0, 0.0], [1.0, 1.0, 0.0])
    assert np.allclose(R, np.eye(3))


def test_gram_schmidt_rejects_parallel_and_zero():
    with pytest.raises(DegenerateRotationError):
        gram_schmidt_rotation([1.0, 0.0, 0.0], [2.0, 0.0, 0.0])
    with pytest.raises(DegenerateRotationError):
        gram_schmidt_rotation([0.0, 0.0, 0.0], [0.0, 1.0, 0.0])


def test_procrustes_projects_noisy_rotation(rng):
    R = random_rotation(rng)
    projected = procrustes_project(R + 0.01 * rng.normal(size=(3, 3)))
    assert _is_rotation(projected)
    assert np.abs(projected - R).max() < 0.05


def test_procrustes_fixes_reflection_and_rejects_rank_deficient():
    assert _is_rotation(procrustes_project(np.diag([1.0, 1.0, -1.0])))
    with pytest.raises(DegenerateRotationError):
        procrustes_project(np.diag([1.0, 1.0, 0.0]))


def test_quantize_snaps_to_dyadic_lattice(rng):
    q = quantize(rng.normal(size=(10, 3)) * 0.1)
    steps = q / DYADIC_STEP
    assert np.array_equal(steps, np.round(steps))
    assert np.array_equal(q.astype(np.float32).astype(np.float64), q)


def test_mesh_sdf_sign_and_magnitude(cube_record):
    mesh = cube_record.mesh
    assert mesh_sdf(mesh, [0.0, 0.0, 0.0]) == pytest.approx(-0.025, abs=1e-9)
    assert mesh_sdf(mesh, [0.05, 0.0, 0.0]) == pytest.approx(0.025, abs=1e-9)
    assert mesh_contains(mesh, np.array([[0.01, 0.01, 0.01], [0.1, 0.0, 0.0]])).tolist() == [True, False]


def test_mesh_sdf_needs_watertight_mesh(cube_record):
    mesh = cube_record.mesh
    open_mesh = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces[:-1])
    with pytest.raises(SdfUndefinedError):
        mesh_sdf(open_mesh, [0.0, 0.0, 0.0])


def test_sample_surface_is_seeded(cube_record):
    a = sample_surface(cube_record.mesh, 50, seed=3)
    b = sample_surface(cube_record.mesh, 50, seed=3)
    assert len(a) == 50
    assert np.array_equal(a.points, b.points)
    assert np.allclose(np.linalg.norm(a.normals, axis=1), 1.0)
    assert np.allclose(np.abs(a.points).max(axis=1), 0.025, atol=1e-9)


def test_sample_surface_errors(cube_record):
    with pytest.raises(ValueError):
        sample_surface(cube_record.mesh, 0, seed=0)
    with pytest.raises(EmptyMeshError):
        sample_surface(trimesh.Trimesh(), 10, seed=0)


def test_point_cloud_rejects_non_unit_normals():
    with pytest.raises(ValueError):
        PointCloud(points=np.zeros((1, 3)), normals=[[0.0, 0.0, 2.0]])


def test_look_at_points_optical_axis_at_target():
    pose = look_at((0.0, -0.3, 0.5), (0.0, 0.0, 0.0))
    assert _is_rotation(pose.rotation)
    in_camera = pose.inverse().apply(np.zeros(3))
    assert np.allclose(in_camera[:2], 0.0, atol=1e-12)
    assert in_camera[2] == pytest.approx(np.hypot(0.3, 0.5))


def test_render_depth_of_a_wall():
    camera = CameraIntrinsics(fx=128.0, fy=128.0, cx=32.0, cy=24.0, width=64, height=48)
    wall = trimesh.creation.box(extents=(2.0, 2.0, 0.1))
    placement = Pose.trusted(np.eye(3), np.array([0.0, 0.0, 1.0]))
    depth, instance = render_depth([(wall, placement)], camera, Pose.identity())
    assert np.allclose(depth, 0.95)
    assert np.all(instance == 0)


def test_render_depth_of_nothing():
    camera = CameraIntrinsics.default()
    depth, instance = render_depth([], camera, Pose.identity())
    assert depth.shape == (240, 320)
    assert np.all(depth == 0)
    assert np.all(instance == -1)


def test_depth_to_cloud_uses_pixel_centers():
    camera = CameraIntrinsics(fx=1.0, fy=1.0, cx=1.5, cy=1.0, width=3, height=2)
    depth = np.ones((2, 3))
    depth[1, 2] = 0.0
    points, pixels = depth_to_cloud(depth, camera)
    assert len(points) == 5
    assert np.allclose(points[0], [-1.0, -0.5, 1.0])
    assert [1, 2] not in pixels.tolist()


def test_estimate_normals_face_the_viewpoint():
    xs, ys = np.meshgrid(np.linspace(-0.1, 0.1, 10), np.linspace(-0.1, 0.1, 10))
    points = np.column_stack([xs.ravel(), ys.ravel(), np.ones(100)])
    normals = estimate_normals(points)
    assert np.allclose(normals, [0.0, 0.0, -1.0], atol=1e-9)
    with pytest.raises(ValueError):
        estimate_normals(points[:2])


def test_depth_noise_leaves_empty_pixels_empty():
    depth = np.full((8, 8), 0.5)
    depth[:, :4] = 0.0
    noisy = apply_depth_noise(depth, DepthNoise(sigma=0.01), seed=1)
    assert np.all(noisy[:, :4] == 0.0)
    assert not np.allclose(noisy[:, 4:], 0.5)
    assert np.array_equal(noisy, apply_depth_noise(depth, DepthNoise(sigma=0.01), seed=1))
    assert apply_depth_noise(depth, None) is depth


def test_voxelize_ignores_points_outside_the_grid():
    grid = GridBounds(origin=np.zeros(3), spacing=0.1, dims=(2, 2, 2))
    cloud = PointCloud(points=[[0.05, 0.05, 0.05], [0.15, 0.05, 0.05], [0.3, 0.0, 0.0], [-0.01, 0.0, 0.0]])
    voxels = voxelize(cloud, grid)
    assert voxels.count == 2
    assert voxels.occupancy[0, 0, 0] and voxels.occupancy[1, 0, 0]


def test_voxelize_single_point_and_empty_cloud():
    grid = GridBounds(origin=np.zeros(3), spacing=0.1, dims=(3, 3, 3))
    assert voxelize(PointCloud(points=[[0.0, 0.0, 0.0]]), grid).count == 1
    assert voxelize(PointCloud.empty(), grid).count == 0


def test_voxelized_sphere_shell_matches_the_analytic_estimate(rng):
    radius, spacing = 0.05, 0.002
    directions = rng.normal(size=(2_000_000, 3))
    points = radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    grid = GridBounds.covering(np.full(3, -radius - 2 * spacing), np.full(3, radius + 2 * spacing), spacing)
    # a randomly oriented surface crosses 1.5 cells per spacing^2 of area on average
    expected = 1.5 * 4 * np.pi * radius ** 2 / spacing ** 2
    assert voxelize(PointCloud(points=points), grid).count == pytest.approx(expected, rel=0.1)


# ---- rotations, properties ---------------------------------------------------------

def test_gram_schmidt_is_always_a_rotation(rng):
    assert np.allclose(gram_schmidt_rotation([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), np.eye(3))
    for r1, r2 in rng.normal(size=(200, 2, 3)):
        R = gram_schmidt_rotation(r1, r2)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-6)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-6)


def test_procrustes_ignores_positive_scale(rng):
    assert np.allclose(procrustes_project(2.0 * np.eye(3)), np.eye(3), atol=1e-12)
    for _ in range(20):
        R = random_rotation(rng)
        assert np.allclose(procrustes_project(R), R, atol=1e-9)
        for s in (0.1, 3.0, 250.0):
            assert np.allclose(procrustes_project(s * R), R, atol=1e-9)


# ---- signed distance ----------------------------------------------------------------

def test_sphere_sdf_is_close_to_analytic():
    sphere = trimesh.creation.icosphere(subdivisions=4, radius=1.0)
    assert mesh_sdf(sphere, [2.0, 0.0, 0.0]) == pytest.approx(1.0, abs=0.01)
    assert mesh_sdf(sphere, [0.0, 0.0, 0.0]) == pytest.approx(-1.0, abs=0.01)
    box = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
    for d in (0.01, 0.1):
        assert mesh_sdf(box, [0.5 + d, 0.0, 0.0]) == pytest.approx(d, abs=1e-12)


def test_sdf_changes_sign_once_leaving_the_sphere(rng):
    sphere = trimesh.creation.icosphere(subdivisions=3, radius=1.0)
    starts = rng.uniform(-0.3, 0.3, size=(100, 1, 3))
    directions = rng.normal(size=(100, 1, 3))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    steps = np.linspace(0.0, 2.0, 21)[None, :, None]
    signs = np.sign(mesh_sdf_batch(sphere, (starts + steps * directions).reshape(-1, 3))).reshape(100, 21)
    assert np.all(signs[:, 0] < 0) and np.all(signs[:, -1] > 0)
    assert np.all(np.sum(signs[:, 1:] != signs[:, :-1], axis=1) == 1)


def test_mug_signs_hold_across_the_handle_gap():
    mug = builtin_library(["mug"])[0].mesh
    assert mug.is_watertight and mug.body_count == 2
    axis = mug.bounds[0, 0] + 0.03  # body axis; the outer wall is 3 cm out
    y, z = np.meshgrid(np.linspace(-0.008, 0.008, 9), np.linspace(-0.018, 0.018, 13))

    def slab(x: float) -> np.ndarray:
        return np.column_stack([np.full(y.size, axis + x), y.ravel(), z.ravel()])

    for x in (0.0302, 0.0305, 0.0308):
        assert np.all(mesh_sdf_batch(mug, slab(x)) > 0)
    for x in (0.032, 0.035, 0.038):
        assert np.all(mesh_sdf_batch(mug, slab(x)) < 0)
    assert mesh_sdf(mug, [axis + 0.027, 0.0, 0.0]) < 0
    assert mesh_sdf(mug, [axis, 0.0, 0.0]) > 0


# ---- surface sampling ---------------------------------------------------------------

def test_sample_surface_is_area_proportional():
    box = trimesh.creation.box(extents=(1.0, 2.0, 3.0))
    cloud = sample_surface(box, 100_000, seed=0)
    axis = np.argmax(np.abs(cloud.normals), axis=1)
    outward = cloud.normals[np.arange(len(cloud)), axis] > 0
    counts = np.bincount(2 * axis + outward, minlength=6)
    areas = np.repeat([2.0 * 3.0, 1.0 * 3.0, 1.0 * 2.0], 2)
    expected = 100_000 * areas / areas.sum()
    assert np.all(np.abs(counts - expected) <= 0.05 * expected)


def test_single_sample_lies_on_the_mesh(cube_record):
    cloud = sample_surface(cube_record.mesh, 1, seed=11)
    _, distance, _ = trimesh.proximity.closest_point(cube_record.mesh, cloud.points)
    assert distance[0] < 1e-9


# ---- rendering ---------------------------------------------------------------------

def _brute_force_depth(meshes, camera):
    """Nearest hit per pixel over every triangle, camera at the origin looking down +z."""
    triangles, owner = [], []
    for index, (mesh, pose) in enumerate(meshes):
        triangles.append(pose.apply(mesh.vertices)[mesh.faces])
        owner.append(np.full(len(mesh.faces), index))
    triangles, owner = np.concatenate(triangles), np.concatenate(owner)
    v, u = np.mgrid[0:camera.height, 0:camera.width]
    rays = np.stack([(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy, np.ones(u.shape)], axis=-1)
    rays = rays.reshape(-1, 3)

    v0, e1, e2 = triangles[:, 0], triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0]
    p = np.cross(rays[:, None], e2[None])
    det = np.sum(e1[None] * p, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = -v0
        a = np.sum(s[None] * p, axis=2) * inv
        q = np.cross(s, e1)
        b = np.sum(rays[:, None] * q[None], axis=2) * inv
        t = np.sum(e2 * q, axis=1)[None] * inv
    hit = (np.abs(det) > 1e-15) & (a >= 0) & (b >= 0) & (a + b <= 1) & (t > 0)
    t = np.where(hit, t, np.inf)
    nearest = np.argmin(t, axis=1)
    best = t[np.arange(len(rays)), nearest]
    depth = np.where(np.isfinite(best), best, 0.0)
    instance = np.where(np.isfinite(best), owner[nearest], -1)
    shape = (camera.height, camera.width)
    return depth.reshape(shape), instance.reshape(shape)


def test_render_depth_matches_brute_force_with_occlusion():
    camera = CameraIntrinsics(fx=32.0, fy=32.0, cx=16.0, cy=12.0, width=32, height=24)
    near = (trimesh.creation.box(extents=(0.1, 0.1, 0.02)), Pose.trusted(np.eye(3), np.array([0.0, 0.0, 0.51])))
    far = (trimesh.creation.box(extents=(0.4, 0.4, 0.02)), Pose.trusted(np.eye(3), np.array([0.05, 0.0, 1.01])))
    depth, instance = render_depth([near, far], camera, Pose.identity())

    expected_depth, expected_instance = _brute_force_depth([near, far], camera)
    assert np.allclose(depth, expected_depth, atol=1e-9)
    assert np.array_equal(instance, expected_instance)
    # the near box hides the far one at the image center
    assert depth[11, 15] == pytest.approx(0.5) and instance[11, 15] == 0
    assert depth[11, 22] == pytest.approx(1.0) and instance[11, 22] == 1
    assert instance[0, 0] == -1 and depth[0, 0] == 0.0

    again, _ = render_depth([near, far], camera, Pose.identity())
    assert np.array_equal(depth, again)


def test_render_depth_of_a_centered_triangle():
    camera = CameraIntrinsics(fx=32.0, fy=32.0, cx=16.0, cy=12.0, width=32, height=24)
    triangle = trimesh.Trimesh(vertices=[[-0.2, -0.2, 1.0], [0.2, -0.2, 1.0], [0.0, 0.3, 1.0]], faces=[[0, 1, 2]], process=False)
    depth, instance = render_depth([(triangle, Pose.identity())], camera, Pose.identity())
    assert depth[12, 16] == pytest.approx(1.0, abs=1e-6)
    assert instance[12, 16] == 0
