import numpy as np
import pytest

from Handlers.DatagenHandler import render_labels
from Handlers.GeometryHandler import look_at, random_rotation
from Handlers.ObjectLibrary import library_by_id
from Handlers.PerceptHandler import (
    decode_detections,
    encoder_loss,
    extract_peaks,
    oracle_encoder,
    perturb_pose,
    pose_points,
)
from Models.Dataset import ImageLabels, PlacedObject, SceneRecord
from Models.Errors import DimensionMismatchError
from Models.Percept import EncoderMaps, EncoderNoise
from Models.Pose import Pose

IDENTITY_ROW = Pose.identity().flat12()


def _labels(shape=(12, 12)) -> ImageLabels:
    heat = np.zeros(shape)
    heat[4:8, 4:8] = 0.5
    masks = np.full(shape, -1)
    masks[4:8, 4:8] = 0
    pose_map = np.zeros(shape + (12,))
    pose_map[masks == 0] = IDENTITY_ROW
    code_map = np.zeros(shape + (3,))
    code_map[masks == 0] = [1.0, 2.0, 3.0]
    return ImageLabels(heatmap=heat, pose_map=pose_map, code_map=code_map, instance_masks=masks, visible=[0])


def _maps_from(labels: ImageLabels) -> EncoderMaps:
    return EncoderMaps(heatmap=labels.heatmap.copy(), pose_map=labels.pose_map.copy(), code_map=labels.code_map.copy())


def test_extract_peaks_keeps_strict_maxima_strongest_first():
    heat = np.zeros((30, 30))
    heat[10, 5] = 0.9
    heat[10, 7] = 0.8
    heat[20, 20] = 0.5
    assert extract_peaks(heat, threshold=0.4, window=5) == [(5, 10, 0.9), (20, 20, 0.5)]
    assert extract_peaks(heat, threshold=0.6, window=5) == [(5, 10, 0.9)]


def test_extract_peaks_ignores_plateaus():
    heat = np.zeros((20, 20))
    heat[10, 10] = heat[10, 11] = 0.7
    assert extract_peaks(heat) == []


def test_decode_detections_reads_pose_and_code(rng):
    heat = np.zeros((20, 20))
    heat[5, 8] = 0.9
    heat[15, 15] = 0.8
    R = random_rotation(rng)
    pose_map = np.zeros((20, 20, 12))
    pose_map[5, 8] = Pose(rotation=R, translation=[0.1, 0.0, 0.5]).flat12()
    code_map = np.zeros((20, 20, 4))
    code_map[5, 8] = [1.0, 2.0, 3.0, 4.0]

    detections = decode_detections(heat, pose_map, code_map)
    # the second peak has an all-zero pose and is dropped
    assert len(detections) == 1
    detection = detections[0]
    assert detection.pixel == (8, 5)
    assert detection.objectness == pytest.approx(0.9)
    assert np.allclose(detection.pose.rotation, R)
    assert np.allclose(detection.pose.translation, [0.1, 0.0, 0.5])
    assert detection.code.tolist() == [1.0, 2.0, 3.0, 4.0]


def test_decode_detections_checks_map_sizes():
    with pytest.raises(DimensionMismatchError):
        decode_detections(np.zeros((4, 4)), np.zeros((4, 5, 12)), np.zeros((4, 4, 2)))


def test_pose_points_are_origin_and_scaled_axes():
    pose = Pose(rotation=np.eye(3), translation=[1.0, 0.0, 0.0])
    assert np.allclose(pose_points(pose), [[1, 0, 0], [1.1, 0, 0], [1, 0.1, 0], [1, 0, 0.1]])


def test_encoder_loss_is_zero_on_ground_truth():
    labels = _labels()
    loss = encoder_loss(_maps_from(labels), labels)
    assert loss.total == pytest.approx(0.0)


def test_encoder_loss_terms():
    labels = _labels()
    pred = _maps_from(labels)
    pred.heatmap += 0.1
    pred.pose_map[labels.instance_masks == 0, 3] += 0.01
    pred.code_map[labels.instance_masks == 0] += 0.3
    loss = encoder_loss(pred, labels)
    assert loss.heat == pytest.approx(0.01)
    assert loss.pose == pytest.approx(0.01)
    assert loss.shape == pytest.approx(0.3)
    assert loss.total == pytest.approx(100 * 0.01 + 5 * 0.01 + 0.3)


def test_encoder_loss_checks_shapes():
    labels = _labels()
    pred = _maps_from(_labels(shape=(10, 12)))
    with pytest.raises(DimensionMismatchError):
        encoder_loss(pred, labels)


def test_perturb_pose_without_noise_is_identity(rng):
    pose = Pose(rotation=random_rotation(rng), translation=[0.0, 0.1, 0.4])
    same = perturb_pose(pose, EncoderNoise(), rng)
    assert np.array_equal(same.matrix, pose.matrix)
    moved = perturb_pose(pose, EncoderNoise(sigma_trans=0.01, sigma_rot=0.1), rng)
    assert not np.allclose(moved.matrix, pose.matrix)
    assert np.allclose(moved.rotation.T @ moved.rotation, np.eye(3))


def test_oracle_encoder_matches_labels_without_noise(cube_record, small_camera):
    library = library_by_id([cube_record])
    placed = PlacedObject(object_id="cube", pose=Pose.trusted(np.eye(3), np.array([0.0, 0.0, 0.025])), footprint_radius=0.036)
    scene = SceneRecord(scene_id="oracle", objects=[placed])
    camera_pose = look_at(small_camera.eye, small_camera.target)
    codes = {"cube": np.ones(4)}
    _, labels = render_labels(scene, library, small_camera.intrinsics, camera_pose, codes)

    clean = oracle_encoder(scene, library, small_camera.intrinsics, camera_pose, codes, labels=labels)
    assert np.allclose(clean.pose_map, labels.pose_map)
    assert np.allclose(clean.code_map, labels.code_map)

    noisy = oracle_encoder(
        scene, library, small_camera.intrinsics, camera_pose, codes, EncoderNoise(sigma_trans=0.01, sigma_code=0.1), labels=labels
    )
    mask = labels.instance_masks == 0
    assert not np.allclose(noisy.pose_map[mask], labels.pose_map[mask])
    assert np.array_equal(noisy.pose_map[~mask], labels.pose_map[~mask])
    assert np.array_equal(noisy.heatmap, labels.heatmap)

    detections = decode_detections(clean.heatmap, clean.pose_map, clean.code_map)
    assert len(detections) == 1
    expected = camera_pose.inverse().compose(placed.pose)
    assert np.allclose(detections[0].pose.matrix, expected.matrix, atol=1e-9)
