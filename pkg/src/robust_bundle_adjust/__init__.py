"""Robust Bundle Adjust - ajustement de faisceaux robuste (Student's t) et banc d'essai Monte Carlo."""

__version__ = "0.1.0"

from robust_bundle_adjust.errors import BundleAdjustError, DataError, SolverError  # noqa: E402
from robust_bundle_adjust.geometry import CameraPose, Intrinsics, WorldPoint, default_intrinsics  # noqa: E402
from robust_bundle_adjust.network import ControlNetwork, load, pack, save, unpack  # noqa: E402
from robust_bundle_adjust.objective import ObjectiveKind, eval_l2, eval_student, gradient, weights  # noqa: E402
from robust_bundle_adjust.outlier import EditRuleConfig, sigma_edit_solve  # noqa: E402
from robust_bundle_adjust.solver import SolverConfig, SolverReport, solve  # noqa: E402

__all__ = [
    "BundleAdjustError",
    "CameraPose",
    "ControlNetwork",
    "DataError",
    "EditRuleConfig",
    "Intrinsics",
    "ObjectiveKind",
    "SolverConfig",
    "SolverError",
    "SolverReport",
    "WorldPoint",
    "default_intrinsics",
    "eval_l2",
    "eval_student",
    "gradient",
    "load",
    "pack",
    "save",
    "sigma_edit_solve",
    "solve",
    "unpack",
    "weights",
]
