"""Synthetic orbital strips: nadir cameras along x over a bounded surface volume.

World z points toward the surface, so every camera looks along +z with an
identity rotation and sits at z = -elevation. Surface heights h above the
datum are stored as z = -h.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robust_bundle_adjust.errors import InfeasibleConfig, IoError, ParseError, ValidationError
from robust_bundle_adjust.geometry import CameraPose, Intrinsics, WorldPoint, default_intrinsics
from robust_bundle_adjust.network import (
    DEFAULT_DOF,
    CameraPrior,
    CameraRecord,
    ControlNetwork,
    Observation,
    PointPrior,
    PointRecord,
)

logger = logging.getLogger(__name__)

ROTATION_PRIOR_WEIGHT = 1e12
# Telemetry errors are drawn Gaussian, so the camera prior kernel is Gaussian to working precision.
TELEMETRY_PRIOR_DOF = 1e8
_MAX_DRAWS_PER_POINT = 1000


def _check_unknown(cls, data: dict) -> None:
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ValidationError(f"{cls.__name__}: unknown keys {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class SceneConfig:
    n_cameras: int = 10
    n_points: int = 200
    elevation: float = 100.0
    overlap_fraction: float = 0.8
    surface_height_range: tuple[float, float] = (0.0, 10.0)
    intrinsics: Intrinsics = field(default_factory=default_intrinsics)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "surface_height_range", tuple(float(v) for v in self.surface_height_range))
        if self.n_cameras < 2:
            raise ValidationError(f"n_cameras must be >= 2, got {self.n_cameras}")
        if self.n_points < 1:
            raise ValidationError(f"n_points must be >= 1, got {self.n_points}")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ValidationError(f"overlap_fraction must be in (0, 1), got {self.overlap_fraction}")
        low, high = self.surface_height_range
        if len(self.surface_height_range) != 2 or low > high:
            raise ValidationError(f"surface_height_range must be (min, max), got {self.surface_height_range}")
        if not self.elevation > 0:
            raise ValidationError(f"elevation must be > 0, got {self.elevation}")

    @property
    def min_depth(self) -> float:
        return self.elevation - self.surface_height_range[1]

    def to_dict(self) -> dict:
        return {
            "n_cameras": self.n_cameras,
            "n_points": self.n_points,
            "elevation": self.elevation,
            "overlap_fraction": self.overlap_fraction,
            "surface_height_range": list(self.surface_height_range),
            "intrinsics": self.intrinsics.to_dict(),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        _check_unknown(cls, data)
        data = dict(data)
        if "intrinsics" in data:
            data["intrinsics"] = Intrinsics.from_dict(data["intrinsics"])
        if "surface_height_range" in data:
            data["surface_height_range"] = tuple(data["surface_height_range"])
        return cls(**data)


class NoiseKind(str, enum.Enum):
    NOMINAL = "nominal"
    CONTAMINATED = "contaminated"
    STUDENT_T = "student"


def _short(value: float) -> str:
    """Table-style number: 0.9 -> '.9', 50.0 -> '50'."""
    text = f"{value:g}"
    return text[1:] if text.startswith("0.") else text


@dataclass(frozen=True)
class NoiseScheme:
    """Reprojection noise regime plus the perturbation of the initial guesses.

    ``phi`` and ``base_variance`` are variances. Camera positions and
    rotations are perturbed like telemetry: the perturbed values are both the
    initial guess and the prior mean. ``camera_prior_dof`` is the dof of
    those camera priors, ``prior_dof`` the dof of the control point priors.
    """

    kind: NoiseKind = NoiseKind.NOMINAL
    p: float = 0.0
    phi: float = 1.0
    df: float = 4.0
    base_variance: float = 1.0
    position_stddev: float = 0.1
    rotation_stddev: float = 0.0
    rotation_prior_weight: float = ROTATION_PRIOR_WEIGHT
    point_stddev: float = 1.0
    camera_prior_dof: float = TELEMETRY_PRIOR_DOF
    prior_dof: float = DEFAULT_DOF
    dof: float = DEFAULT_DOF
    n_control_points: int = 0
    control_stddev: float = 0.1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        except ValueError:
            raise ValidationError(f"unknown noise kind {self.kind!r}") from None
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"p must be in [0, 1], got {self.p}")
        for name in (
            "phi",
            "df",
            "base_variance",
            "position_stddev",
            "camera_prior_dof",
            "prior_dof",
            "dof",
            "control_stddev",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("rotation_stddev", "point_stddev"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.n_control_points < 0:
            raise ValidationError(f"n_control_points must be >= 0, got {self.n_control_points}")

    @classmethod
    def nominal(cls, **kwargs) -> "NoiseScheme":
        return cls(kind=NoiseKind.NOMINAL, **kwargs)

    @classmethod
    def contaminated(cls, p: float, phi: float, **kwargs) -> "NoiseScheme":
        return cls(kind=NoiseKind.CONTAMINATED, p=p, phi=phi, **kwargs)

    @classmethod
    def student(cls, df: float = 4.0, **kwargs) -> "NoiseScheme":
        return cls(kind=NoiseKind.STUDENT_T, df=df, **kwargs)

    @property
    def label(self) -> str:
        if self.kind is NoiseKind.NOMINAL:
            return "N(0,1)"
        if self.kind is NoiseKind.STUDENT_T:
            return f"t(df={_short(self.df)})"
        base = f"N(0,{_short(self.base_variance)})"
        return f"{_short(1.0 - self.p)} {base} + {_short(self.p)} N(0,{_short(self.phi)})"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["kind"] = self.kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseScheme":
        _check_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    camera_positions: np.ndarray
    camera_rotations: np.ndarray
    points: np.ndarray
    outlier_flags: np.ndarray

    def to_dict(self) -> dict:
        return {
            "camera_positions": self.camera_positions.tolist(),
            "camera_rotations": self.camera_rotations.tolist(),
            "points": self.points.tolist(),
            "outlier_flags": [bool(f) for f in self.outlier_flags],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            camera_positions=np.array(data["camera_positions"], dtype=np.float64).reshape(-1, 3),
            camera_rotations=np.array(data["camera_rotations"], dtype=np.float64).reshape(-1, 3),
            points=np.array(data["points"], dtype=np.float64).reshape(-1, 3),
            outlier_flags=np.array(data["outlier_flags"], dtype=bool),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return cls.from_dict(data)
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: invalid ground-truth file ({exc})") from exc


def _footprint(intr: Intrinsics, depth: float) -> tuple[np.ndarray, np.ndarray]:
    """Ground extent (low, high) in x and y seen at ``depth`` by a nadir camera at the origin."""
    f = intr.focal_length
    pp = np.asarray(intr.principal_point)
    size = np.asarray(intr.image_size)
    return depth * (0.0 - pp) / f, depth * (size - pp) / f


def camera_spacing(config: SceneConfig) -> float:
    low, high = _footprint(config.intrinsics, config.min_depth)
    return (1.0 - config.overlap_fraction) * float(high[0] - low[0])


def camera_positions(config: SceneConfig) -> np.ndarray:
    positions = np.zeros((config.n_cameras, 3))
    positions[:, 0] = camera_spacing(config) * np.arange(config.n_cameras)
    positions[:, 2] = -config.elevation
    return positions


def volume_bounds(config: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper corners of the box points are drawn from."""
    if not config.min_depth > 0:
        raise InfeasibleConfig(
            f"surface height {config.surface_height_range[1]} reaches the camera elevation {config.elevation}"
        )
    low, high = _footprint(config.intrinsics, config.min_depth)
    xs = camera_positions(config)[:, 0]
    if config.n_cameras == 2:
        x_low, x_high = xs[1] + low[0], xs[0] + high[0]
    else:
        x_low, x_high = xs[1] + low[0], xs[-2] + high[0]
    lower = np.array([x_low, low[1], -config.surface_height_range[1]])
    upper = np.array([x_high, high[1], -config.surface_height_range[0]])
    if not np.all(upper[:2] > lower[:2]):
        raise InfeasibleConfig(f"empty surface volume for overlap {config.overlap_fraction}")
    return lower, upper


def _visibility(config: SceneConfig, positions: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (n, m, 2) of every point in every camera and the visibility mask (n, m)."""
    intr = config.intrinsics
    rel = points[:, None, :] - positions[None, :, :]
    depth = rel[..., 2]
    safe = np.where(depth > 0, depth, 1.0)
    pixels = intr.focal_length * rel[..., :2] / safe[..., None] + np.asarray(intr.principal_point)
    size = np.asarray(intr.image_size)
    inside = np.all((pixels >= 0.0) & (pixels < size), axis=-1)
    return pixels, inside & (depth > 0)


def generate_scene(config: SceneConfig) -> tuple[ControlNetwork, GroundTruth]:
    """Exact observations of random points that at least two cameras see."""
    lower, upper = volume_bounds(config)
    positions = camera_positions(config)
    rng = np.random.default_rng(config.rng_seed)

    points = np.zeros((0, 3))
    draws = 0
    budget = _MAX_DRAWS_PER_POINT * config.n_points
    while points.shape[0] < config.n_points:
        need = config.n_points - points.shape[0]
        if draws >= budget:
            raise InfeasibleConfig(f"could not place {config.n_points} points seen by two cameras")
        candidates = rng.uniform(lower, upper, size=(need, 3))
        draws += need
        _, visible = _visibility(config, positions, candidates)
        points = np.vstack([points, candidates[visible.sum(axis=1) >= 2]])
    pixels, visible = _visibility(config, positions, points)

    observations = [
        Observation(camera_id=j, point_id=i, pixel=pixels[i, j], cov=np.eye(2))
        for i in range(config.n_points)
        for j in np.flatnonzero(visible[i])
    ]
    cameras = [CameraRecord(pose=CameraPose(position=pos), intrinsics=config.intrinsics) for pos in positions]
    net = ControlNetwork(
        cameras=cameras,
        points=[PointRecord(point=WorldPoint(p)) for p in points],
        observations=observations,
    )
    truth = GroundTruth(
        camera_positions=positions,
        camera_rotations=np.zeros_like(positions),
        points=points,
        outlier_flags=np.zeros(len(observations), dtype=bool),
    )
    logger.info(
        "scene: %d cameras, %d points, %d observations (%d draws)", *net.counts, draws
    )
    return net, truth


def sample_noise(scheme: NoiseScheme, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pixel noise (size, 2) and the per-observation contaminant flags."""
    flags = np.zeros(size, dtype=bool)
    if scheme.kind is NoiseKind.NOMINAL:
        return rng.standard_normal((size, 2)), flags
    if scheme.kind is NoiseKind.STUDENT_T:
        return rng.standard_t(scheme.df, size=(size, 2)), flags
    flags = rng.random(size) < scheme.p
    scale = np.where(flags, math.sqrt(scheme.phi), math.sqrt(scheme.base_variance))
    return scale[:, None] * rng.standard_normal((size, 2)), flags


def apply_noise(
    net: ControlNetwork, truth: GroundTruth, scheme: NoiseScheme, seed
) -> tuple[ControlNetwork, GroundTruth]:
    """Noisy copy of a generated scene, ready to adjust, and the truth with outlier flags."""
    rng = np.random.default_rng(seed)
    n_cam, n_pt, n_obs = net.counts
    noise, flags = sample_noise(scheme, n_obs, rng)
    telemetry_pos = truth.camera_positions + scheme.position_stddev * rng.standard_normal((n_cam, 3))
    telemetry_rot = truth.camera_rotations + scheme.rotation_stddev * rng.standard_normal((n_cam, 3))
    guess_points = truth.points + scheme.point_stddev * rng.standard_normal((n_pt, 3))
    control = rng.choice(n_pt, size=min(scheme.n_control_points, n_pt), replace=False)
    control_means = truth.points[control] + scheme.control_stddev * rng.standard_normal((control.size, 3))

    cam_info = np.diag([scheme.rotation_prior_weight] * 3 + [1.0 / scheme.position_stddev**2] * 3)
    cameras = [
        dataclasses.replace(
            rec,
            pose=CameraPose(position=telemetry_pos[j], rotation=telemetry_rot[j]),
            prior=CameraPrior(
                mean=np.concatenate([telemetry_rot[j], telemetry_pos[j]]), cov_inv=cam_info, dof=scheme.camera_prior_dof
            ),
        )
        for j, rec in enumerate(net.cameras)
    ]
    points = [PointRecord(point=WorldPoint(guess_points[i])) for i in range(n_pt)]
    control_info = np.eye(3) / scheme.control_stddev**2
    for i, mean in zip(control, control_means):
        points[i] = PointRecord(
            point=WorldPoint(guess_points[i]), prior=PointPrior(mean=mean, cov_inv=control_info, dof=scheme.prior_dof)
        )
    observations = [
        dataclasses.replace(obs, pixel=obs.pixel + noise[k], cov=np.eye(2), dof=scheme.dof)
        for k, obs in enumerate(net.observations)
    ]
    noisy = ControlNetwork(cameras=cameras, points=points, observations=observations)
    return noisy, dataclasses.replace(truth, outlier_flags=flags)
