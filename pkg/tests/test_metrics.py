import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from robust_bundle_adjust.errors import CountMismatch, ValidationError, ZeroBaseline
from robust_bundle_adjust.geometry import CameraPose, WorldPoint, default_intrinsics
from robust_bundle_adjust.metrics import (
    MseReport,
    camera_mse,
    mse,
    ray_distances,
    relative_mse,
    triangulation_error,
    world_mse,
)
from robust_bundle_adjust.network import CameraRecord, ControlNetwork, Observation, PointRecord, pack


def test_mse_examples():
    assert mse([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [0, 0, 0]]) == 0.5
    assert mse([[1, 2, 2]], [[0, 0, 0]]) == 9.0
    assert mse(np.zeros((0, 3)), np.zeros((0, 3))) == 0.0


def test_mse_count_mismatch():
    with pytest.raises(CountMismatch):
        mse(np.zeros((2, 3)), np.zeros((3, 3)))


def test_relative_mse():
    assert relative_mse(3.0, 1.5) == 2.0
    with pytest.raises(ZeroBaseline):
        relative_mse(1.0, 0.0)


def test_world_and_camera_mse_at_truth(small_scene):
    net, truth = small_scene
    assert world_mse(net, truth) == 0.0
    assert camera_mse(net, truth) == 0.0


def test_mse_report(noisy_scene, small_scene):
    noisy, _ = noisy_scene
    _, truth = small_scene
    report = MseReport.compute(noisy, truth, baseline_world_mse0=2.0, baseline_camera_mse0=0.5)
    assert math.isclose(report.world_point_mse, world_mse(noisy, truth))
    assert report.relative_world == report.world_point_mse / 2.0
    assert report.relative_camera == report.camera_xyz_mse / 0.5
    assert report.baseline_mse0 == 2.0
    # initial guesses are offset by the configured perturbations
    assert 1.0 < report.world_point_mse < 6.0
    assert report.camera_xyz_mse < 0.2


def test_parallel_rays():
    dist, parallel = ray_distances([0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 0, 1])
    assert parallel.tolist() == [True]
    assert dist[0] == pytest.approx(1.0)


def test_skew_lines():
    dist, parallel = ray_distances([0, 0, 0], [1, 0, 0], [0, 0, 2], [0, 1, 0])
    assert not parallel[0]
    assert dist[0] == pytest.approx(2.0)


def test_intersecting_rays(rng):
    point = rng.normal(size=3)
    c1, c2 = rng.normal(size=3), rng.normal(size=3)
    d1 = (point - c1) / np.linalg.norm(point - c1)
    d2 = (point - c2) / np.linalg.norm(point - c2)
    dist, _ = ray_distances(c1, d1, c2, d2)
    assert dist[0] < 1e-12


def test_exact_network_triangulates_to_zero(small_scene):
    net, _ = small_scene
    report = triangulation_error(net)
    assert report.n_points == net.counts[1]
    assert report.max < 1e-9
    assert report.n_parallel == 0


def test_noise_raises_triangulation_error(noisy_scene, small_scene):
    exact = triangulation_error(small_scene[0])
    noisy = triangulation_error(noisy_scene[0])
    assert noisy.median > 100 * max(exact.median, 1e-12)
    assert noisy.min <= noisy.median <= noisy.max


def test_rigid_motion_invariance(noisy_scene):
    net, _ = noisy_scene
    before = triangulation_error(net)
    q = Rotation.from_rotvec([0.1, -0.2, 0.3])
    t = np.array([5.0, -3.0, 2.0])
    m = len(net.cameras)
    c = pack(net)
    cams = c[: 6 * m].reshape(m, 6).copy()
    # every camera starts with the identity rotation, so R' = Q^T
    np.testing.assert_array_equal(cams[:, :3], 0.0)
    cams[:, :3] = -q.as_rotvec()
    cams[:, 3:] = q.apply(cams[:, 3:]) + t
    c[: 6 * m] = cams.ravel()
    after = triangulation_error(net, c)
    assert after.median == pytest.approx(before.median, rel=1e-9)
    assert after.max == pytest.approx(before.max, rel=1e-9)


def test_no_tie_points():
    intr = default_intrinsics()
    net = ControlNetwork(
        cameras=[CameraRecord(pose=CameraPose(position=[0, 0, -100]), intrinsics=intr)],
        points=[PointRecord(point=WorldPoint([0, 0, 0]))],
        observations=[Observation(camera_id=0, point_id=0, pixel=[512, 512], cov=np.eye(2))],
    )
    with pytest.raises(ValidationError):
        triangulation_error(net)


def test_skew_line_oracle(rng):
    c1, c2 = rng.normal(size=(20, 3)) * 10, rng.normal(size=(20, 3)) * 10
    d1, d2 = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    dist, parallel = ray_distances(c1, d1, c2, d2)
    assert not parallel.any()
    for k in range(20):
        # closest points c1 + t d1 and c2 + s d2 by least squares
        (t, s), *_ = np.linalg.lstsq(np.column_stack([d1[k], -d2[k]]), c2[k] - c1[k], rcond=None)
        expected = np.linalg.norm(c1[k] + t * d1[k] - c2[k] - s * d2[k])
        assert dist[k] == pytest.approx(expected, rel=1e-10)
