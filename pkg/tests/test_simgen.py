import dataclasses
import json

import numpy as np
import pytest
from scipy import stats

from robust_bundle_adjust import network
from robust_bundle_adjust.errors import InfeasibleConfig, ParseError, ValidationError
from robust_bundle_adjust.objective import ObjectiveKind, evaluate
from robust_bundle_adjust.network import pack
from robust_bundle_adjust.simgen import (
    ROTATION_PRIOR_WEIGHT,
    TELEMETRY_PRIOR_DOF,
    GroundTruth,
    NoiseKind,
    NoiseScheme,
    SceneConfig,
    apply_noise,
    camera_positions,
    camera_spacing,
    generate_scene,
    sample_noise,
    volume_bounds,
)


def test_two_cameras_see_the_volume_centre():
    config = SceneConfig(n_cameras=2, n_points=20, rng_seed=1)
    net, truth = generate_scene(config)
    lower, upper = volume_bounds(config)
    centre = 0.5 * (lower + upper)
    for pos in truth.camera_positions:
        rel = centre - pos
        assert rel[2] > 0
        pixel = config.intrinsics.focal_length * rel[:2] / rel[2] + np.asarray(config.intrinsics.principal_point)
        assert np.all(pixel >= 0) and np.all(pixel < np.asarray(config.intrinsics.image_size))
    assert net.counts[2] == 40


def test_strip_layout(small_config):
    positions = camera_positions(small_config)
    np.testing.assert_allclose(np.diff(positions[:, 0]), camera_spacing(small_config))
    assert np.all(positions[:, 2] == -small_config.elevation)
    lower, upper = volume_bounds(small_config)
    assert lower[2] == -10.0 and upper[2] == 0.0


def test_every_point_seen_twice(small_scene, small_config):
    net, truth = small_scene
    assert net.counts[:2] == (small_config.n_cameras, small_config.n_points)
    assert np.all(np.bincount(net.arrays.pt_idx, minlength=net.counts[1]) >= 2)
    assert net.component_count() == 1
    pt_idx = net.arrays.pt_idx
    assert np.all(np.diff(pt_idx) >= 0)
    np.testing.assert_array_equal(truth.camera_rotations, 0.0)


def test_exact_observations_have_zero_objective(small_scene):
    net, _ = small_scene
    for kind in ObjectiveKind:
        assert evaluate(net, pack(net), kind) == 0.0


def test_generation_is_deterministic(small_config):
    a, ta = generate_scene(small_config)
    b, tb = generate_scene(small_config)
    assert network.dumps(a) == network.dumps(b)
    np.testing.assert_array_equal(ta.points, tb.points)
    c, _ = generate_scene(dataclasses.replace(small_config, rng_seed=8))
    assert network.dumps(a) != network.dumps(c)


def test_apply_noise_is_deterministic(small_scene):
    net, truth = small_scene
    scheme = NoiseScheme.contaminated(0.1, 50.0)
    a, fa = apply_noise(net, truth, scheme, seed=5)
    b, fb = apply_noise(net, truth, scheme, seed=5)
    assert network.dumps(a) == network.dumps(b)
    np.testing.assert_array_equal(fa.outlier_flags, fb.outlier_flags)


def test_infeasible_configs():
    with pytest.raises(InfeasibleConfig):
        generate_scene(SceneConfig(elevation=5.0, surface_height_range=(0.0, 10.0)))
    with pytest.raises(ValidationError):
        SceneConfig(n_cameras=1)
    with pytest.raises(ValidationError):
        SceneConfig(overlap_fraction=1.0)


def test_scene_config_round_trip():
    config = SceneConfig(n_cameras=5, surface_height_range=(1.0, 4.0), rng_seed=9)
    assert SceneConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config
    with pytest.raises(ValidationError):
        SceneConfig.from_dict({"cameras": 3})


# noise


def test_nominal_variance():
    noise, flags = sample_noise(NoiseScheme.nominal(), 200_000, np.random.default_rng(0))
    assert noise.shape == (200_000, 2)
    assert not flags.any()
    assert abs(np.var(noise) - 1.0) < 0.03


def test_contaminated_variance_and_flags():
    scheme = NoiseScheme.contaminated(0.1, 50.0)
    noise, flags = sample_noise(scheme, 200_000, np.random.default_rng(1))
    # 0.9 * 1 + 0.1 * 50
    assert abs(np.var(noise) / 5.9 - 1.0) < 0.05
    assert abs(flags.mean() - 0.1) < 0.005
    assert abs(np.var(noise[~flags]) - 1.0) < 0.03


def test_student_noise_is_heavy_tailed():
    noise, _ = sample_noise(NoiseScheme.student(4.0), 200_000, np.random.default_rng(2))
    assert stats.kurtosis(noise.ravel()) > 3.0
    assert abs(np.median(noise)) < 0.02


def test_noise_labels():
    assert NoiseScheme.nominal().label == "N(0,1)"
    assert NoiseScheme.contaminated(0.1, 50.0).label == ".9 N(0,1) + .1 N(0,50)"
    assert NoiseScheme.contaminated(0.5, 10.0).label == ".5 N(0,1) + .5 N(0,10)"
    assert NoiseScheme.student(4.0).label == "t(df=4)"


def test_noise_scheme_validation():
    with pytest.raises(ValidationError):
        NoiseScheme.contaminated(1.5, 50.0)
    with pytest.raises(ValidationError):
        NoiseScheme(kind="laplace")
    with pytest.raises(ValidationError):
        NoiseScheme.from_dict({"sigma": 2.0})
    scheme = NoiseScheme.contaminated(0.2, 100.0, dof=3.0)
    assert NoiseScheme.from_dict(scheme.to_dict()) == scheme
    assert scheme.kind is NoiseKind.CONTAMINATED


def test_apply_noise_priors_and_guesses(small_scene):
    net, truth = small_scene
    noisy, flagged = apply_noise(net, truth, NoiseScheme.nominal(position_stddev=0.5), seed=3)
    assert flagged.outlier_flags.shape == (net.counts[2],)
    for j, cam in enumerate(noisy.cameras):
        np.testing.assert_array_equal(cam.prior.mean[3:], cam.pose.position)
        np.testing.assert_array_equal(cam.prior.mean[:3], 0.0)
        np.testing.assert_allclose(np.diag(cam.prior.cov_inv), [ROTATION_PRIOR_WEIGHT] * 3 + [4.0] * 3)
        assert cam.prior.dof == TELEMETRY_PRIOR_DOF
        assert np.linalg.norm(cam.pose.position - truth.camera_positions[j]) > 0
    assert all(pt.prior is None for pt in noisy.points)
    assert not np.array_equal(noisy.point_coords(), truth.points)
    for before, after in zip(net.observations, noisy.observations):
        assert (before.camera_id, before.point_id) == (after.camera_id, after.point_id)
        assert after.dof == 4.0


def test_control_points_get_priors(small_scene):
    net, truth = small_scene
    noisy, _ = apply_noise(net, truth, NoiseScheme.nominal(n_control_points=5, control_stddev=0.2), seed=4)
    control = [i for i, pt in enumerate(noisy.points) if pt.prior is not None]
    assert len(control) == 5
    for i in control:
        np.testing.assert_allclose(noisy.points[i].prior.cov_inv, np.eye(3) / 0.04)
        assert np.linalg.norm(noisy.points[i].prior.mean - truth.points[i]) < 2.0


def test_truth_round_trip(tmp_path, small_scene):
    net, truth = small_scene
    _, truth = apply_noise(net, truth, NoiseScheme.contaminated(0.1, 50.0), seed=6)
    path = tmp_path / "truth.json"
    truth.save(path)
    again = GroundTruth.load(path)
    np.testing.assert_array_equal(again.points, truth.points)
    np.testing.assert_array_equal(again.camera_positions, truth.camera_positions)
    np.testing.assert_array_equal(again.outlier_flags, truth.outlier_flags)

    path.write_text('{"points": []}', encoding="utf-8")
    with pytest.raises(ParseError):
        GroundTruth.load(path)
