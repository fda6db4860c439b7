"""Sigma-edit baseline: L2 adjustment, drop large residuals, refit."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robust_bundle_adjust import export
from robust_bundle_adjust.errors import AllRemoved, ValidationError
from robust_bundle_adjust.network import ControlNetwork, merge, pack, subset
from robust_bundle_adjust.objective import ObjectiveKind, residuals
from robust_bundle_adjust.solver import SolverConfig, SolverReport, solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EditRuleConfig:
    k_sigma: float = 2.0
    rounds: int = 1

    def __post_init__(self) -> None:
        if not self.k_sigma > 0:
            raise ValidationError(f"k_sigma must be > 0, got {self.k_sigma}")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ValidationError(f"rounds must be a positive integer, got {self.rounds}")


@dataclass(frozen=True)
class RemovedObservation:
    observation: int
    camera: int
    point: int
    residual_norm: float
    threshold: float
    round: int


@dataclass
class SigmaEditResult:
    network: ControlNetwork
    report: SolverReport
    removed: list[RemovedObservation] = field(default_factory=list)
    reports: list[SolverReport] = field(default_factory=list)
    dropped_cameras: tuple[int, ...] = ()
    dropped_points: tuple[int, ...] = ()

    @property
    def removed_ids(self) -> list[int]:
        return [r.observation for r in self.removed]

    def to_csv(self, path: str | Path) -> None:
        export.write_csv(path, export.REMOVED_COLUMNS, [dataclasses.asdict(r) for r in self.removed])


def edit_threshold(norms, k_sigma: float) -> float:
    """mean + k_sigma * stddev over all norms (population statistics)."""
    norms = np.asarray(norms, dtype=np.float64)
    return float(np.mean(norms) + k_sigma * np.std(norms))


def select_outliers(norms, k_sigma: float) -> tuple[np.ndarray, float]:
    norms = np.asarray(norms, dtype=np.float64)
    threshold = edit_threshold(norms, k_sigma)
    return norms > threshold, threshold


def sigma_edit_solve(
    net: ControlNetwork, solver_config: SolverConfig, edit_config: EditRuleConfig | None = None
) -> SigmaEditResult:
    edit_config = edit_config or EditRuleConfig()
    config = dataclasses.replace(solver_config, kind=ObjectiveKind.GAUSSIAN_L2)
    estimate, report = solve(net, config)
    result = SigmaEditResult(network=estimate, report=report, reports=[report])

    a = net.arrays
    kept = np.arange(a.n_observations)
    for round_no in range(1, edit_config.rounds + 1):
        current = subset(estimate, kept)
        norms = np.sqrt(residuals(current.net, pack(current.net)).mahal_sq)
        mask, threshold = select_outliers(norms, edit_config.k_sigma)
        if not mask.any():
            logger.info("round %d: no residual above %.4g, nothing removed", round_no, threshold)
            break
        if mask.all():
            raise AllRemoved(f"round {round_no}: every observation exceeds the threshold {threshold:.4g}")
        for k, norm in zip(kept[mask], norms[mask]):
            result.removed.append(
                RemovedObservation(
                    observation=int(k),
                    camera=int(a.cam_idx[k]),
                    point=int(a.pt_idx[k]),
                    residual_norm=float(norm),
                    threshold=threshold,
                    round=round_no,
                )
            )
        kept = kept[~mask]
        logger.info("round %d: removed %d observations (threshold %.4g)", round_no, int(mask.sum()), threshold)

        part = subset(estimate, kept)
        dropped_cameras = np.setdiff1d(np.arange(a.n_cameras), part.camera_map)
        dropped_points = np.setdiff1d(np.arange(a.n_points), part.point_map)
        if dropped_cameras.size or dropped_points.size:
            logger.warning(
                "round %d: %d cameras and %d points lost all observations; frozen at current estimate",
                round_no,
                dropped_cameras.size,
                dropped_points.size,
            )
        result.dropped_cameras = tuple(int(j) for j in dropped_cameras)
        result.dropped_points = tuple(int(i) for i in dropped_points)

        refined, report = solve(part.net, config)
        estimate = merge(estimate, part, refined)
        result.reports.append(report)
        result.report = report

    result.network = estimate
    return result
