"""Shared fixtures: random control networks and small simulated strips."""

import dataclasses

import numpy as np
import pytest

from robust_bundle_adjust.geometry import CameraPose, WorldPoint, default_intrinsics, project
from robust_bundle_adjust.network import (
    CameraPrior,
    CameraRecord,
    ControlNetwork,
    Observation,
    PointPrior,
    PointRecord,
)
from robust_bundle_adjust.simgen import NoiseScheme, SceneConfig, apply_noise, generate_scene


def _spd(rng, n, floor):
    L = rng.normal(size=(n, n))
    return L @ L.T / n + floor * np.eye(n)


def build_random_network(
    rng,
    n_cameras=3,
    n_points=8,
    camera_priors=True,
    point_priors=True,
    noise=3.0,
    dof=None,
):
    """Nadir-ish cameras 100 units above random points, noisy pixels, random SPD covariances."""
    intr = default_intrinsics()
    cameras = []
    for j in range(n_cameras):
        pose = CameraPose(
            position=[20.0 * j + rng.uniform(-2, 2), rng.uniform(-2, 2), -100.0 + rng.uniform(-2, 2)],
            rotation=rng.normal(0.0, 0.05, 3),
        )
        prior = None
        if camera_priors:
            prior = CameraPrior(
                mean=pose.as_vector() + rng.normal(0.0, 0.1, 6),
                cov_inv=_spd(rng, 6, 0.1),
                dof=rng.uniform(1.0, 10.0) if dof is None else dof,
            )
        cameras.append(CameraRecord(pose=pose, intrinsics=intr, prior=prior))

    points, observations = [], []
    for i in range(n_points):
        coords = np.array([rng.uniform(-10.0, 20.0 * max(n_cameras - 1, 1) + 10.0), rng.uniform(-20, 20), rng.uniform(-5, 5)])
        prior = None
        if point_priors and i % 3 == 0:
            prior = PointPrior(
                mean=coords + rng.normal(0.0, 0.5, 3),
                cov_inv=_spd(rng, 3, 0.1),
                dof=rng.uniform(1.0, 10.0) if dof is None else dof,
            )
        # the network's initial guess is off the point the pixels were measured from
        points.append(PointRecord(point=WorldPoint(coords + rng.normal(0.0, 0.3, 3)), prior=prior))
        k = n_cameras if n_cameras < 2 else rng.integers(2, n_cameras + 1)
        for j in sorted(rng.choice(n_cameras, size=k, replace=False)):
            pixel = project(cameras[j].pose, intr, WorldPoint(coords)) + rng.normal(0.0, noise, 2)
            B = rng.normal(size=(2, 2))
            observations.append(
                Observation(
                    camera_id=j,
                    point_id=i,
                    pixel=pixel,
                    cov=B @ B.T + 0.5 * np.eye(2),
                    dof=rng.uniform(1.0, 10.0) if dof is None else dof,
                )
            )
    return ControlNetwork(cameras=cameras, points=points, observations=observations)


def pin_cameras(net, truth, weight=1e8):
    """Strong priors holding every camera at its true pose."""
    cameras = [
        dataclasses.replace(
            rec,
            prior=CameraPrior(
                mean=np.concatenate([truth.camera_rotations[j], truth.camera_positions[j]]),
                cov_inv=weight * np.eye(6),
            ),
        )
        for j, rec in enumerate(net.cameras)
    ]
    return ControlNetwork(cameras=cameras, points=net.points, observations=net.observations)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_network():
    return build_random_network


@pytest.fixture
def small_config():
    return SceneConfig(n_cameras=4, n_points=30, rng_seed=7)


@pytest.fixture
def small_scene(small_config):
    return generate_scene(small_config)


@pytest.fixture
def noisy_scene(small_scene):
    net, truth = small_scene
    return apply_noise(net, truth, NoiseScheme.nominal(), seed=11)


@pytest.fixture
def pin():
    return pin_cameras
