"""Damped Gauss-Newton (Levenberg-Marquardt) bundle adjustment.

One iteration solves ``H dc = -grad F`` with
``H = sum rho^2 J^T Sigma^-1 J + diag(varrho Omega^-1) + diag(g Phi^-1) + lambda I``
by eliminating the point blocks (reduced camera system), then accepts the
trial iff it lowers F. The same loop drives L2 and Student objectives; for
L2 every weight is one.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from robust_bundle_adjust import export
from robust_bundle_adjust.errors import BehindCamera, Diverged, SingularSystem, ValidationError
from robust_bundle_adjust.geometry import POINT_DIM, POSE_DIM
from robust_bundle_adjust.network import ControlNetwork, pack, split_parameters, unpack
from robust_bundle_adjust.objective import (
    ObjectiveKind,
    assemble_gradient,
    evaluate,
    linearize,
    objective_value,
    scale_factors,
)

logger = logging.getLogger(__name__)

_LAMBDA0_TAU = 1e-3
# lambda never drops below this fraction of the largest diagonal entry of H
_LAMBDA_FLOOR = 1e-15
CONVERGED = ("gradient", "step", "objective")


@dataclass(frozen=True)
class SolverConfig:
    kind: ObjectiveKind = ObjectiveKind.STUDENT_T
    lambda0: float | None = None
    grad_tol: float = 1e-6
    step_tol: float = 1e-12
    f_tol: float = 1e-10
    max_iters: int = 200
    max_rejects: int = 20

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        except ValueError:
            raise ValidationError(f"kind must be one of {[k.value for k in ObjectiveKind]}, got {self.kind!r}") from None
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise ValidationError(f"lambda0 must be > 0, got {self.lambda0}")
        if not self.grad_tol > 0:
            raise ValidationError(f"grad_tol must be > 0, got {self.grad_tol}")
        if not self.step_tol >= 0:
            raise ValidationError(f"step_tol must be >= 0, got {self.step_tol}")
        if not self.f_tol >= 0:
            raise ValidationError(f"f_tol must be >= 0, got {self.f_tol}")
        if self.max_iters < 1 or self.max_rejects < 1:
            raise ValidationError("max_iters and max_rejects must be positive")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["kind"] = self.kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown solver settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class SparseNormalSystem:
    """Block form of H: camera blocks U, point blocks V, per-observation couplings W."""

    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    b: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray
    lam: float = 0.0

    @property
    def n_cameras(self) -> int:
        return self.U.shape[0]

    @property
    def n_points(self) -> int:
        return self.V.shape[0]

    def damped(self, lam: float) -> "SparseNormalSystem":
        """Add ``lam`` I to the blocks of this (undamped) system."""
        return dataclasses.replace(
            self,
            U=self.U + lam * np.eye(POSE_DIM),
            V=self.V + lam * np.eye(POINT_DIM),
            lam=float(lam),
        )

    def max_diagonal(self) -> float:
        diag = np.concatenate([np.diagonal(self.U, axis1=1, axis2=2).ravel(), np.diagonal(self.V, axis1=1, axis2=2).ravel()])
        return float(diag.max()) if diag.size else 0.0

    def to_dense(self) -> np.ndarray:
        m, n = self.n_cameras, self.n_points
        cut = POSE_DIM * m
        H = np.zeros((cut + POINT_DIM * n,) * 2)
        for j in range(m):
            H[POSE_DIM * j : POSE_DIM * (j + 1), POSE_DIM * j : POSE_DIM * (j + 1)] = self.U[j]
        for i in range(n):
            s = cut + POINT_DIM * i
            H[s : s + POINT_DIM, s : s + POINT_DIM] = self.V[i]
        for k, (j, i) in enumerate(zip(self.cam_idx, self.pt_idx)):
            rows = slice(POSE_DIM * j, POSE_DIM * (j + 1))
            cols = slice(cut + POINT_DIM * i, cut + POINT_DIM * (i + 1))
            H[rows, cols] += self.W[k]
            H[cols, rows] += self.W[k].T
        return H


def _assemble(net: ControlNetwork, lin, factors) -> SparseNormalSystem:
    a = net.arrays
    obs_w, cam_w, pt_w = factors
    info_A = np.einsum("kij,kja->kia", a.info, lin.A)
    info_B = np.einsum("kij,kja->kia", a.info, lin.B)
    w = obs_w[:, None, None]
    U = cam_w[:, None, None] * a.cam_prior_info
    V = pt_w[:, None, None] * a.pt_prior_info
    np.add.at(U, a.cam_idx, w * np.einsum("kia,kib->kab", lin.A, info_A))
    np.add.at(V, a.pt_idx, w * np.einsum("kia,kib->kab", lin.B, info_B))
    W = w * np.einsum("kia,kib->kab", lin.A, info_B)
    return SparseNormalSystem(
        U=U,
        V=V,
        W=W,
        b=assemble_gradient(net, lin, factors),
        cam_idx=a.cam_idx,
        pt_idx=a.pt_idx,
        pair_a=a.pair_a,
        pair_b=a.pair_b,
    )


def build_system(net: ControlNetwork, c, kind: ObjectiveKind, lam: float) -> SparseNormalSystem:
    lin = linearize(net, c)
    return _assemble(net, lin, scale_factors(net, lin, kind)).damped(lam)


def _smallest_eigenvalue(matrices: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(matrices).min())


def schur_solve(sys: SparseNormalSystem) -> np.ndarray:
    """Step dc solving H dc = -b through the reduced camera system."""
    m, n = sys.n_cameras, sys.n_points
    gc, gp = split_parameters(sys.b, m, n)
    try:
        np.linalg.cholesky(sys.V)
    except np.linalg.LinAlgError:
        raise SingularSystem(_smallest_eigenvalue(sys.V), where="point block") from None
    V_inv = np.linalg.inv(sys.V)

    Y = sys.W @ V_inv[sys.pt_idx]
    S = np.zeros((m, m, POSE_DIM, POSE_DIM))
    np.add.at(
        S,
        (sys.cam_idx[sys.pair_a], sys.cam_idx[sys.pair_b]),
        -Y[sys.pair_a] @ np.swapaxes(sys.W[sys.pair_b], 1, 2),
    )
    S[np.arange(m), np.arange(m)] += sys.U
    S = S.transpose(0, 2, 1, 3).reshape(POSE_DIM * m, POSE_DIM * m)
    S = 0.5 * (S + S.T)

    rhs = -gc.copy()
    np.add.at(rhs, sys.cam_idx, np.einsum("kab,kb->ka", Y, gp[sys.pt_idx]))
    if m:
        try:
            factor = linalg.cho_factor(S, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise SingularSystem(float(np.linalg.eigvalsh(S).min())) from None
        d_cam = linalg.cho_solve(factor, rhs.ravel(), check_finite=False).reshape(m, POSE_DIM)
    else:
        d_cam = np.zeros((0, POSE_DIM))

    back = -gp.copy()
    np.add.at(back, sys.pt_idx, -np.einsum("kab,ka->kb", sys.W, d_cam[sys.cam_idx]))
    d_pt = np.einsum("iab,ib->ia", V_inv, back)
    return np.concatenate([d_cam.ravel(), d_pt.ravel()])


def update_damping(lam: float, phi: float) -> float:
    """Accepted-step rule: lambda * max(1/3, 1 - (2 phi - 1)^3)."""
    return lam * max(1.0 / 3.0, 1.0 - (2.0 * phi - 1.0) ** 3)


@dataclass(frozen=True)
class SolverState:
    c: np.ndarray
    lam: float
    iter: int
    objective: float
    grad_inf_norm: float
    system: SparseNormalSystem
    nu: float = 2.0
    rejects: int = 0
    accepted: int = 0
    last_accepted: bool = False
    gain_ratio: float = math.nan
    status: str = "running"

    @property
    def converged(self) -> bool:
        return self.status in CONVERGED


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    F: float
    lam: float
    accepted: bool
    grad_inf_norm: float
    millis: float
    gain_ratio: float

    def to_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "F": self.F,
            "lambda": self.lam,
            "accepted": self.accepted,
            "grad_inf_norm": self.grad_inf_norm,
            "millis": self.millis,
            "gain_ratio": self.gain_ratio,
        }


@dataclass
class SolverReport:
    kind: ObjectiveKind
    initial_objective: float
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    final_objective: float = math.nan
    wall_time_s: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status in CONVERGED

    @property
    def accepted_steps(self) -> int:
        return sum(1 for r in self.records if r.accepted)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def mean_iteration_ms(self) -> float:
        return float(np.mean([r.millis for r in self.records])) if self.records else 0.0

    def accepted_objectives(self) -> list[float]:
        return [self.initial_objective] + [r.F for r in self.records if r.accepted]

    def to_csv(self, path: str | Path) -> None:
        export.write_csv(path, export.ITERATION_COLUMNS, [r.to_row() for r in self.records])


def _linearized_state(net: ControlNetwork, c: np.ndarray, kind: ObjectiveKind):
    lin = linearize(net, c)
    system = _assemble(net, lin, scale_factors(net, lin, kind))
    return objective_value(net, lin, kind), system


def initial_state(net: ControlNetwork, config: SolverConfig, c=None) -> SolverState:
    c = pack(net) if c is None else np.asarray(c, dtype=np.float64)
    F, system = _linearized_state(net, c, config.kind)
    lam = config.lambda0
    if lam is None:
        lam = _LAMBDA0_TAU * system.max_diagonal() or _LAMBDA0_TAU
    grad_inf = float(np.max(np.abs(system.b))) if system.b.size else 0.0
    status = "gradient" if grad_inf < config.grad_tol else "running"
    return SolverState(c=c, lam=float(lam), iter=0, objective=F, grad_inf_norm=grad_inf, system=system, status=status)


def step(state: SolverState, net: ControlNetwork, config: SolverConfig) -> SolverState:
    """One trial of the damped iteration; accepted iff F decreases."""
    nxt = dataclasses.replace(state, iter=state.iter + 1, last_accepted=False, gain_ratio=math.nan)
    damped = state.system.damped(state.lam)
    try:
        delta = schur_solve(damped)
    except SingularSystem as exc:
        logger.debug("iteration %d: %s", nxt.iter, exc)
        delta = None

    if delta is not None:
        if np.linalg.norm(delta) <= config.step_tol * (np.linalg.norm(state.c) + config.step_tol):
            return dataclasses.replace(nxt, status="step")
        trial = state.c + delta
        try:
            F_new = evaluate(net, trial, config.kind)
        except BehindCamera as exc:
            logger.debug("iteration %d: trial rejected (%s)", nxt.iter, exc)
            F_new = math.inf

        if F_new < state.objective:
            predicted = 0.5 * float(delta @ (state.lam * delta - damped.b))
            phi = (state.objective - F_new) / predicted if predicted > 0 else 0.5
            _, system = _linearized_state(net, trial, config.kind)
            grad_inf = float(np.max(np.abs(system.b))) if system.b.size else 0.0
            if grad_inf < config.grad_tol:
                status = "gradient"
            elif phi > 0.25 and state.objective - F_new <= config.f_tol * abs(state.objective):
                status = "objective"
            else:
                status = "running"
            return dataclasses.replace(
                nxt,
                c=trial,
                lam=max(update_damping(state.lam, phi), _LAMBDA_FLOOR * system.max_diagonal()),
                objective=F_new,
                grad_inf_norm=grad_inf,
                system=system,
                nu=2.0,
                rejects=0,
                accepted=state.accepted + 1,
                last_accepted=True,
                gain_ratio=phi,
                status=status,
            )

    rejects = state.rejects + 1
    if rejects >= config.max_rejects:
        raise Diverged(f"{rejects} consecutive rejected steps (lambda={state.lam:.3e})")
    return dataclasses.replace(nxt, lam=state.lam * state.nu, nu=2.0 * state.nu, rejects=rejects)


def solve(net: ControlNetwork, config: SolverConfig) -> tuple[ControlNetwork, SolverReport]:
    start = time.perf_counter()
    state = initial_state(net, config)
    report = SolverReport(kind=config.kind, initial_objective=state.objective)

    while not state.converged and state.iter < config.max_iters:
        t0 = time.perf_counter()
        lam_used = state.lam
        state = step(state, net, config)
        report.records.append(
            IterationRecord(
                iteration=state.iter,
                F=state.objective,
                lam=lam_used,
                accepted=state.last_accepted,
                grad_inf_norm=state.grad_inf_norm,
                millis=1000.0 * (time.perf_counter() - t0),
                gain_ratio=state.gain_ratio,
            )
        )
        logger.debug(
            "iter %3d  F=%.10g  lambda=%.3e  %s  |g|=%.3e",
            state.iter,
            state.objective,
            lam_used,
            "accept" if state.last_accepted else "reject",
            state.grad_inf_norm,
        )

    report.status = state.status if state.converged else "max_iters"
    report.final_objective = state.objective
    report.wall_time_s = time.perf_counter() - start
    logger.info(
        "%s solve: %s after %d iterations (%d accepted), F %.6g -> %.6g",
        config.kind.value,
        report.status,
        report.iterations,
        report.accepted_steps,
        report.initial_objective,
        report.final_objective,
    )
    return unpack(state.c, net), report
