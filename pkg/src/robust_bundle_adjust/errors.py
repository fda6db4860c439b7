"""Exception hierarchy.

Two families: ``DataError`` for bad inputs (files, configs, infeasible
geometry) and ``SolverError`` for numerical failures of an adjustment. The
``exit_code`` attribute is what the command line returns for each family.
"""

from __future__ import annotations


class BundleAdjustError(Exception):
    """Base class for all errors raised by robust_bundle_adjust."""

    exit_code = 2


class DataError(BundleAdjustError):
    exit_code = 2


class SolverError(BundleAdjustError):
    exit_code = 3


class ParseError(DataError):
    """A network, config or manifest file could not be parsed."""


class ValidationError(DataError):
    """A record violates an invariant; the message names the record."""


class IoError(DataError):
    """A file could not be read or written."""


class DimensionMismatch(DataError):
    """A parameter vector does not match the network layout."""


class CountMismatch(DataError):
    """Estimate and ground truth hold a different number of entities."""


class ZeroBaseline(DataError):
    """Relative MSE requested against a non-positive baseline."""


class NotSPD(DataError):
    """A matrix that must be symmetric positive definite is not."""


class InfeasibleConfig(DataError):
    """A scene configuration yields no usable volume or visibility."""


class BehindCamera(DataError):
    """A point has non-positive depth in the camera frame."""

    def __init__(self, depth: float, observation: int | None = None) -> None:
        self.depth = float(depth)
        self.observation = observation
        where = f"observation {observation}: " if observation is not None else ""
        super().__init__(f"{where}point behind camera (depth={self.depth:.6g})")


class SingularSystem(SolverError):
    """The damped normal equations could not be factorized."""

    def __init__(self, smallest_pivot: float, where: str = "reduced camera system") -> None:
        self.smallest_pivot = float(smallest_pivot)
        super().__init__(f"{where} not positive definite (smallest pivot {self.smallest_pivot:.3e})")


class Diverged(SolverError):
    """Too many consecutive rejected steps."""


class AllRemoved(SolverError):
    """The sigma-edit rule removed every observation."""
