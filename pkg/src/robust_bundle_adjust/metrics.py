"""Accuracy statistics: mean squared error against ground truth and triangulation error."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from robust_bundle_adjust.errors import CountMismatch, ValidationError, ZeroBaseline
from robust_bundle_adjust.geometry import back_project_batch
from robust_bundle_adjust.network import ControlNetwork, split_parameters

logger = logging.getLogger(__name__)

# Unit rays closer to parallel than this are measured point-to-line.
PARALLEL_TOL = 1e-12


def mse(estimate, truth) -> float:
    """Mean squared Euclidean distance between matched rows."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise CountMismatch(f"estimate has shape {estimate.shape}, truth has {truth.shape}")
    if estimate.size == 0:
        return 0.0
    return float(np.mean(np.sum((estimate - truth) ** 2, axis=-1)))


def world_mse(net: ControlNetwork, truth) -> float:
    return mse(net.point_coords(), truth.points)


def camera_mse(net: ControlNetwork, truth) -> float:
    """Camera positions only; rotations do not enter."""
    return mse(net.camera_positions(), truth.camera_positions)


def relative_mse(mse_value: float, baseline_mse0: float) -> float:
    if not baseline_mse0 > 0:
        raise ZeroBaseline(f"baseline MSE must be > 0, got {baseline_mse0}")
    return float(mse_value) / float(baseline_mse0)


@dataclass(frozen=True)
class MseReport:
    world_point_mse: float
    camera_xyz_mse: float
    relative_world: float
    relative_camera: float
    baseline_world_mse0: float
    baseline_camera_mse0: float

    @property
    def baseline_mse0(self) -> float:
        return self.baseline_world_mse0

    @classmethod
    def compute(
        cls, net: ControlNetwork, truth, baseline_world_mse0: float, baseline_camera_mse0: float
    ) -> "MseReport":
        world = world_mse(net, truth)
        camera = camera_mse(net, truth)
        return cls(
            world_point_mse=world,
            camera_xyz_mse=camera,
            relative_world=relative_mse(world, baseline_world_mse0),
            relative_camera=relative_mse(camera, baseline_camera_mse0),
            baseline_world_mse0=baseline_world_mse0,
            baseline_camera_mse0=baseline_camera_mse0,
        )


@dataclass(frozen=True)
class TriangulationReport:
    min: float
    median: float
    max: float
    mean: float
    n_points: int
    n_parallel: int = 0

    def to_row(self) -> dict:
        return {
            "min": self.min,
            "median": self.median,
            "max": self.max,
            "mean": self.mean,
            "n_points": self.n_points,
            "n_parallel": self.n_parallel,
        }


def ray_distances(c1, d1, c2, d2) -> tuple[np.ndarray, np.ndarray]:
    """Shortest distance between rays (centre, unit direction); also flags parallel pairs."""
    c1, d1, c2, d2 = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (c1, d1, c2, d2))
    base = c2 - c1
    cross = np.cross(d1, d2)
    norm = np.linalg.norm(cross, axis=1)
    parallel = norm < PARALLEL_TOL
    skew = np.abs(np.einsum("ki,ki->k", base, cross)) / np.where(parallel, 1.0, norm)
    to_line = np.linalg.norm(np.cross(base, d1), axis=1)
    return np.where(parallel, to_line, skew), parallel


def triangulation_error(net: ControlNetwork, c=None) -> TriangulationReport:
    """Mean pairwise ray distance per tie-point, summarized over tie-points.

    Rays are back-projected from the measured pixels through the poses in
    ``c`` (or the network's own poses).
    """
    a = net.arrays
    if c is None:
        cams = np.array([cam.pose.as_vector() for cam in net.cameras]).reshape(-1, 6)
    else:
        cams, _ = split_parameters(c, a.n_cameras, a.n_points)
    cam = cams[a.cam_idx]
    centres, rays = back_project_batch(cam[:, 0:3], cam[:, 3:6], a.focal[a.cam_idx], a.principal[a.cam_idx], a.pixels)

    upper = a.pair_a < a.pair_b
    pa, pb = a.pair_a[upper], a.pair_b[upper]
    if pa.size == 0:
        raise ValidationError("no tie-point is observed by two cameras")
    dist, parallel = ray_distances(centres[pa], rays[pa], centres[pb], rays[pb])
    n_parallel = int(parallel.sum())
    if n_parallel:
        logger.warning("%d ray pairs are parallel; measured point-to-line", n_parallel)

    pts = a.pt_idx[pa]
    counts = np.bincount(pts, minlength=a.n_points)
    evaluated = counts > 0
    per_point = np.bincount(pts, weights=dist, minlength=a.n_points)[evaluated] / counts[evaluated]
    return TriangulationReport(
        min=float(per_point.min()),
        median=float(np.median(per_point)),
        max=float(per_point.max()),
        mean=float(per_point.mean()),
        n_points=int(per_point.size),
        n_parallel=n_parallel,
    )
