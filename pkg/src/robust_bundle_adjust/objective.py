"""Objectives of the adjustment: Gaussian L2 and the Student's-t MAP objective F(c).

All terms are evaluated in a vectorized way over ``ControlNetwork.arrays``.
Sums run over observations, cameras and points in index order so repeated
evaluations are bitwise identical.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import betaln, gammaln

from robust_bundle_adjust.errors import NotSPD
from robust_bundle_adjust.geometry import linearize_batch, project_batch
from robust_bundle_adjust.network import ControlNetwork, NetworkArrays, split_parameters

logger = logging.getLogger(__name__)


class ObjectiveKind(str, enum.Enum):
    GAUSSIAN_L2 = "l2"
    STUDENT_T = "student"


@dataclass(frozen=True)
class Residual:
    """Reprojection errors eps = z - h and their squared Mahalanobis norms."""

    eps: np.ndarray
    mahal_sq: np.ndarray


@dataclass(frozen=True)
class WeightSet:
    rho: np.ndarray
    varrho: np.ndarray
    g: np.ndarray


@dataclass(frozen=True)
class PriorResidual:
    delta: np.ndarray
    quad: np.ndarray


@dataclass(frozen=True)
class Linearization:
    """Everything the solver needs at one iterate c."""

    residual: Residual
    A: np.ndarray
    B: np.ndarray
    camera_prior: PriorResidual
    point_prior: PriorResidual


def student_log_density(eps, mu, R, s: float) -> float:
    """Log of the m-variate Student density with location mu, scale R and dof s."""
    eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    m = eps.size
    if R.shape != (m, m) or not np.allclose(R, R.T):
        raise NotSPD(f"scale matrix must be symmetric {m}x{m}")
    try:
        L = linalg.cholesky(R, lower=True)
    except linalg.LinAlgError:
        raise NotSPD("scale matrix is not positive definite") from None
    s = float(s)
    z = linalg.solve_triangular(L, eps - mu, lower=True)
    maha = float(z @ z)
    half_logdet = float(np.sum(np.log(np.diag(L))))
    # lgamma((s+m)/2) - lgamma(s/2) through betaln, which stays exact for huge s
    log_ratio = gammaln(0.5 * m) - betaln(0.5 * m, 0.5 * s)
    return float(
        log_ratio - 0.5 * m * math.log(math.pi * s) - half_logdet - 0.5 * (s + m) * math.log1p(maha / s)
    )


def _quadratic(delta: np.ndarray, info: np.ndarray) -> np.ndarray:
    return np.einsum("ki,kij,kj->k", delta, info, delta)


def _prior_residuals(a: NetworkArrays, cams: np.ndarray, pts: np.ndarray) -> tuple[PriorResidual, PriorResidual]:
    cam_delta = cams - a.cam_prior_mean
    pt_delta = pts - a.pt_prior_mean
    return (
        PriorResidual(cam_delta, _quadratic(cam_delta, a.cam_prior_info)),
        PriorResidual(pt_delta, _quadratic(pt_delta, a.pt_prior_info)),
    )


def _observation_args(a: NetworkArrays, cams: np.ndarray, pts: np.ndarray):
    cam = cams[a.cam_idx]
    return cam[:, 0:3], cam[:, 3:6], a.focal[a.cam_idx], a.principal[a.cam_idx], pts[a.pt_idx]


def _residual(a: NetworkArrays, pixels: np.ndarray) -> Residual:
    eps = a.pixels - pixels
    return Residual(eps=eps, mahal_sq=_quadratic(eps, a.info))


def residuals(net: ControlNetwork, c) -> Residual:
    """Raises BehindCamera whose ``observation`` is the observation index."""
    a = net.arrays
    cams, pts = split_parameters(c, a.n_cameras, a.n_points)
    if a.n_observations == 0:
        return Residual(eps=np.zeros((0, 2)), mahal_sq=np.zeros(0))
    return _residual(a, project_batch(*_observation_args(a, cams, pts)))


def linearize(net: ControlNetwork, c) -> Linearization:
    a = net.arrays
    cams, pts = split_parameters(c, a.n_cameras, a.n_points)
    if a.n_observations:
        pixels, A, B = linearize_batch(*_observation_args(a, cams, pts))
    else:
        pixels, A, B = np.zeros((0, 2)), np.zeros((0, 2, 6)), np.zeros((0, 2, 3))
    cam_prior, pt_prior = _prior_residuals(a, cams, pts)
    return Linearization(residual=_residual(a, pixels), A=A, B=B, camera_prior=cam_prior, point_prior=pt_prior)


def _total(a: NetworkArrays, mahal_sq, cam_quad, pt_quad, kind: ObjectiveKind) -> float:
    if ObjectiveKind(kind) is ObjectiveKind.GAUSSIAN_L2:
        return 0.5 * (float(np.sum(mahal_sq)) + float(np.sum(cam_quad)) + float(np.sum(pt_quad)))
    s, r, q = a.dof, a.cam_prior_dof, a.pt_prior_dof
    return 0.5 * (
        float(np.sum((s + 2.0) * np.log1p(mahal_sq / s)))
        + float(np.sum((r + 6.0) * np.log1p(cam_quad / r)))
        + float(np.sum((q + 3.0) * np.log1p(pt_quad / q)))
    )


def objective_value(net: ControlNetwork, lin: Linearization, kind: ObjectiveKind) -> float:
    return _total(net.arrays, lin.residual.mahal_sq, lin.camera_prior.quad, lin.point_prior.quad, kind)


def evaluate(net: ControlNetwork, c, kind: ObjectiveKind) -> float:
    a = net.arrays
    cams, pts = split_parameters(c, a.n_cameras, a.n_points)
    res = residuals(net, c)
    cam_prior, pt_prior = _prior_residuals(a, cams, pts)
    return _total(a, res.mahal_sq, cam_prior.quad, pt_prior.quad, kind)


def eval_l2(net: ControlNetwork, c) -> float:
    """Half the sum of the squared Mahalanobis norms of residuals and prior offsets."""
    return evaluate(net, c, ObjectiveKind.GAUSSIAN_L2)


def eval_student(net: ControlNetwork, c) -> float:
    """F(c): the Student's-t MAP objective with constant terms dropped."""
    return evaluate(net, c, ObjectiveKind.STUDENT_T)


def _weights(a: NetworkArrays, lin: Linearization) -> WeightSet:
    s, r, q = a.dof, a.cam_prior_dof, a.pt_prior_dof
    return WeightSet(
        rho=np.sqrt((s + 2.0) / (s + lin.residual.mahal_sq)),
        varrho=(r + 6.0) / (r + lin.camera_prior.quad),
        g=(q + 3.0) / (q + lin.point_prior.quad),
    )


def weights(net: ControlNetwork, c) -> WeightSet:
    return _weights(net.arrays, linearize(net, c))


def scale_factors(net: ControlNetwork, lin: Linearization, kind: ObjectiveKind):
    """Per-term multipliers (rho**2, varrho, g) of the gradient and Hessian; ones for L2."""
    a = net.arrays
    if ObjectiveKind(kind) is ObjectiveKind.GAUSSIAN_L2:
        return np.ones(a.n_observations), np.ones(a.n_cameras), np.ones(a.n_points)
    w = _weights(a, lin)
    return w.rho**2, w.varrho, w.g


def assemble_gradient(net: ControlNetwork, lin: Linearization, factors) -> np.ndarray:
    a = net.arrays
    obs_w, cam_w, pt_w = factors
    w_eps = obs_w[:, None] * np.einsum("kij,kj->ki", a.info, lin.residual.eps)
    g_cam = cam_w[:, None] * np.einsum("jkl,jl->jk", a.cam_prior_info, lin.camera_prior.delta)
    g_pt = pt_w[:, None] * np.einsum("ikl,il->ik", a.pt_prior_info, lin.point_prior.delta)
    np.add.at(g_cam, a.cam_idx, -np.einsum("kij,ki->kj", lin.A, w_eps))
    np.add.at(g_pt, a.pt_idx, -np.einsum("kij,ki->kj", lin.B, w_eps))
    return np.concatenate([g_cam.ravel(), g_pt.ravel()])


def gradient(net: ControlNetwork, c, kind: ObjectiveKind) -> np.ndarray:
    lin = linearize(net, c)
    return assemble_gradient(net, lin, scale_factors(net, lin, kind))


def influence_curves(u, dof: float = 4.0) -> dict[str, np.ndarray]:
    """Negative log-likelihood and influence (psi) of scalar residuals ``u``.

    Gaussian and Laplace columns are reference curves; only the Student kernel
    is an estimator here. The Student psi redescends for |u| > sqrt(dof).
    """
    u = np.asarray(u, dtype=np.float64)
    s = float(dof)
    return {
        "u": u,
        "gaussian_nll": 0.5 * u**2,
        "gaussian_psi": u.copy(),
        "laplace_nll": np.abs(u),
        "laplace_psi": np.sign(u),
        "student_nll": 0.5 * (s + 1.0) * np.log1p(u**2 / s),
        "student_psi": (s + 1.0) * u / (s + u**2),
    }
