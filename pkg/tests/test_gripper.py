import numpy as np
import pytest
import trimesh

from Handlers.GeometryHandler import random_rotation, rotation_about_z, sample_surface
from Handlers.GripperHandler import (
    check_antipodal,
    check_antipodal_batch,
    check_collision_mesh,
    check_collision_mesh_batch,
    check_collision_points,
    check_collision_points_batch,
    control_point_sets,
    load_gripper_config,
)
from Models.Errors import ConfigError
from Models.Geometry import PointCloud
from Models.Gripper import Grasp, GripperModel, grasps_from_matrices, stack_poses
from Models.Pose import Pose


def _identity_grasp() -> Grasp:
    return Grasp(pose=Pose.identity())


def test_default_gripper_dimensions(gripper):
    assert np.allclose(gripper.window_center, [0.0, 0.0, 0.089])
    palm = gripper.collision_boxes[0]
    assert palm.name == "palm"
    assert palm.pose.translation[2] - palm.half_extents[2] == pytest.approx(0.0)
    assert palm.pose.translation[2] + palm.half_extents[2] == pytest.approx(0.066)


def test_control_points_are_flip_symmetric(gripper):
    V, V_flipped = control_point_sets(gripper)
    assert V.shape == (4, 5)
    assert np.allclose(V[3], 1.0)
    assert sorted(map(tuple, V.T.round(9))) == sorted(map(tuple, V_flipped.T.round(9)))


def test_asymmetric_control_points_are_rejected(gripper):
    points = gripper.control_points.copy()
    points[1, 0] += 0.01
    with pytest.raises(ValueError):
        GripperModel(
            control_points=points,
            max_opening=gripper.max_opening,
            finger_depth=gripper.finger_depth,
            finger_offset=gripper.finger_offset,
            finger_base=gripper.finger_base,
            collision_boxes=gripper.collision_boxes,
        )


def test_box_between_fingers_is_antipodal(window_box):
    ok, contacts = check_antipodal(window_box, _identity_grasp(), mu=0.5)
    assert ok
    assert contacts.width == pytest.approx(0.04)
    assert sorted([contacts.c1[0], contacts.c2[0]]) == pytest.approx([-0.02, 0.02])
    assert abs(contacts.n1[0]) == pytest.approx(1.0)


def test_diagonal_faces_fail_the_friction_cone():
    slab = trimesh.creation.box(extents=(0.04, 0.1, 0.04))
    slab.apply_transform(Pose.trusted(rotation_about_z(np.pi / 4), np.array([0.0, 0.0, 0.089])).matrix)
    ok, _ = check_antipodal(slab, _identity_grasp(), mu=0.5)
    assert not ok


def test_sphere_in_window_is_antipodal():
    sphere = trimesh.creation.icosphere(subdivisions=4, radius=0.03)
    sphere.apply_translation((0.0, 0.0, 0.089))
    ok, _ = check_antipodal(sphere, _identity_grasp(), mu=1.0)
    assert ok


def test_empty_window_is_not_antipodal(window_box):
    far = Grasp(pose=Pose.trusted(np.eye(3), np.array([0.5, 0.0, 0.0])))
    ok, contacts = check_antipodal(window_box, far, mu=0.5)
    assert not ok
    assert contacts is None


def test_antipodal_needs_positive_friction(window_box):
    with pytest.raises(ValueError):
        check_antipodal(window_box, _identity_grasp(), mu=0.0)


def test_clearance_turns_near_miss_into_collision(window_box):
    # the box bottom sits 3 mm above the palm
    assert not check_collision_mesh(window_box, _identity_grasp(), clearance=0.0)
    assert check_collision_mesh(window_box, _identity_grasp(), clearance=0.005)


def test_object_swallowing_the_gripper_collides():
    block = trimesh.creation.box(extents=(0.5, 0.5, 0.5))
    assert check_collision_mesh(block, _identity_grasp(), clearance=0.0)


def test_point_collisions(gripper):
    grasp = _identity_grasp()
    assert check_collision_points(PointCloud(points=[[0.0, 0.0, 0.033]]), grasp, 0.0)
    assert not check_collision_points(PointCloud(points=[[0.0, 0.0, 0.089]]), grasp, 0.0)
    assert not check_collision_points(PointCloud.empty(), grasp, 0.0)


def test_point_collision_boundary_is_strict():
    grasp = _identity_grasp()
    c = 0.004
    outside = PointCloud(points=[[0.0, 0.0, -(c + 1e-6)]])
    inside = PointCloud(points=[[0.0, 0.0, -(c - 1e-6)]])
    assert not check_collision_points(outside, grasp, c)
    assert check_collision_points(inside, grasp, c)


def test_load_gripper_config(tmp_path):
    path = tmp_path / "gripper.txt"
    path.write_text("# wide gripper\nmax_opening = 0.1\npalm_half_extents = 0.06, 0.0125, 0.033\n")
    model = load_gripper_config(path)
    assert model.max_opening == pytest.approx(0.1)
    assert np.allclose(model.collision_boxes[0].half_extents, [0.06, 0.0125, 0.033])
    assert model.finger_depth == pytest.approx(0.046)


@pytest.mark.parametrize(
    "text",
    ["unknown_key = 1\n", "max_opening = wide\n", "palm_half_extents = 0.05\n", "max_opening 0.1\n", "max_opening = -1\n"],
)
def test_bad_gripper_config(tmp_path, text):
    path = tmp_path / "gripper.txt"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_gripper_config(path)


# ---- properties over random grasps ------------------------------------------------

def _grasps_around_origin(rng, gripper, n=200, spread=0.01) -> np.ndarray:
    """Random orientations with the finger window near the origin."""
    poses = np.tile(np.eye(4), (n, 1, 1))
    for pose in poses:
        R = random_rotation(rng)
        pose[:3, :3] = R
        pose[:3, 3] = -R @ gripper.window_center + rng.uniform(-spread, spread, size=3)
    return poses


def _primitives(cube_record):
    return [cube_record.mesh, trimesh.creation.icosphere(subdivisions=3, radius=0.03)]


def test_antipodality_is_monotone_in_friction(cube_record, gripper, rng):
    for mesh in _primitives(cube_record):
        poses = _grasps_around_origin(rng, gripper)
        verdicts = [check_antipodal_batch(mesh, poses, mu, gripper) for mu in (0.1, 0.3, 0.5, 1.0, 2.0)]
        assert verdicts[-1].any()
        for lower, higher in zip(verdicts, verdicts[1:]):
            assert np.all(higher[lower])


def test_flipped_grasps_get_the_same_verdicts(cube_record, gripper, rng):
    n_colliding = n_free = 0
    for mesh in _primitives(cube_record):
        grasps = grasps_from_matrices(_grasps_around_origin(rng, gripper, n=100, spread=0.02))
        poses = stack_poses(grasps)
        flipped = stack_poses([g.flipped() for g in grasps])
        antipodal = check_antipodal_batch(mesh, poses, 0.5, gripper)
        assert np.array_equal(antipodal, check_antipodal_batch(mesh, flipped, 0.5, gripper))
        colliding = check_collision_mesh_batch(mesh, poses, 0.003, gripper)
        assert np.array_equal(colliding, check_collision_mesh_batch(mesh, flipped, 0.003, gripper))
        n_colliding += int(colliding.sum())
        n_free += int((~colliding).sum())
    assert n_colliding and n_free


def test_point_collisions_are_monotone_in_clearance(cube_record, gripper, rng):
    cloud = sample_surface(cube_record.mesh, 500, seed=4)
    above = np.eye(4)
    above[2, 3] = 0.035  # palm 1 cm over the top face
    poses = np.concatenate([_grasps_around_origin(rng, gripper, spread=0.03), above[None]])
    verdicts = [check_collision_points_batch(cloud, poses, c, gripper) for c in (0.0, 0.002, 0.005, 0.01, 0.02)]
    for smaller, larger in zip(verdicts, verdicts[1:]):
        assert np.all(larger[smaller])
    assert not verdicts[0][-1] and verdicts[-1][-1]
