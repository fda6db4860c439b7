"""The control network: cameras, world points, observations and priors.

Networks are immutable. Solvers read them through ``pack``/``unpack`` and the
vectorized ``NetworkArrays`` view; everything that changes parameters builds
a new network.

File format (JSON)::

    {"version": 1,
     "cameras": [{"position": [..3], "rotation": [..3],
                  "intrinsics": {"focal_length": f, "principal_point": [cx, cy],
                                 "image_size": [w, h]},
                  "prior": {"mean": [..6], "cov_inv": [[..6]x6], "dof": 4}}],
     "points": [{"coords": [..3], "prior": {"mean": [..3], "cov_inv": [[..3]x3], "dof": 4}}],
     "observations": [{"camera": j, "point": i, "pixel": [u, v],
                       "cov": [[..2]x2], "dof": 4}]}

Prior blocks are optional and omitted when absent. A camera prior mean is the
parameter block ``[rotation, position]``. Missing ``dof`` defaults to 4.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from robust_bundle_adjust.errors import DimensionMismatch, IoError, ParseError, ValidationError
from robust_bundle_adjust.geometry import POINT_DIM, POSE_DIM, CameraPose, Intrinsics, WorldPoint

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_DOF = 4.0


def _frozen_matrix(values, size: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != (size, size):
        raise ValidationError(f"{name} must be {size}x{size}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    if not np.allclose(arr, arr.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(arr).max())):
        raise ValidationError(f"{name} must be symmetric")
    arr.setflags(write=False)
    return arr


def _frozen_vector(values, size: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (size,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be {size} finite numbers")
    arr.setflags(write=False)
    return arr


def _check_dof(dof: float) -> float:
    dof = float(dof)
    if not dof > 0:
        raise ValidationError(f"dof must be > 0, got {dof}")
    return dof


def _check_psd(matrix: np.ndarray, name: str) -> None:
    eig = np.linalg.eigvalsh(matrix)
    if eig.size and eig.min() < -1e-9 * max(1.0, abs(eig.max())):
        raise ValidationError(f"{name} must be positive semi-definite (min eigenvalue {eig.min():.3e})")


@dataclass(frozen=True, eq=False)
class _Prior:
    mean: np.ndarray
    cov_inv: np.ndarray
    dof: float = DEFAULT_DOF

    size = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen_vector(self.mean, self.size, "mean"))
        object.__setattr__(self, "cov_inv", _frozen_matrix(self.cov_inv, self.size, "cov_inv"))
        object.__setattr__(self, "dof", _check_dof(self.dof))
        _check_psd(self.cov_inv, "cov_inv")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov_inv": self.cov_inv.tolist(), "dof": self.dof}

    @classmethod
    def from_dict(cls, data: dict):
        return cls(mean=data["mean"], cov_inv=data["cov_inv"], dof=data.get("dof", DEFAULT_DOF))


class CameraPrior(_Prior):
    """Prior x_j ~ (mean, Omega_j) over the block [rotation, position]."""

    size = POSE_DIM


class PointPrior(_Prior):
    """Prior y_i ~ (mean, Phi_i); a point with a prior is a ground control point."""

    size = POINT_DIM


@dataclass(frozen=True, eq=False)
class Observation:
    camera_id: int
    point_id: int
    pixel: np.ndarray
    cov: np.ndarray
    dof: float = DEFAULT_DOF

    def __post_init__(self) -> None:
        object.__setattr__(self, "camera_id", int(self.camera_id))
        object.__setattr__(self, "point_id", int(self.point_id))
        object.__setattr__(self, "pixel", _frozen_vector(self.pixel, 2, "pixel"))
        object.__setattr__(self, "cov", _frozen_matrix(self.cov, 2, "cov"))
        object.__setattr__(self, "dof", _check_dof(self.dof))
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValidationError("cov must be positive definite") from None

    def to_dict(self) -> dict:
        return {
            "camera": self.camera_id,
            "point": self.point_id,
            "pixel": self.pixel.tolist(),
            "cov": self.cov.tolist(),
            "dof": self.dof,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        return cls(
            camera_id=data["camera"],
            point_id=data["point"],
            pixel=data["pixel"],
            cov=data.get("cov", np.eye(2)),
            dof=data.get("dof", DEFAULT_DOF),
        )


@dataclass(frozen=True, eq=False)
class CameraRecord:
    pose: CameraPose
    intrinsics: Intrinsics
    prior: CameraPrior | None = None

    def to_dict(self) -> dict:
        out = self.pose.to_dict()
        out["intrinsics"] = self.intrinsics.to_dict()
        if self.prior is not None:
            out["prior"] = self.prior.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CameraRecord":
        prior = data.get("prior")
        return cls(
            pose=CameraPose.from_dict(data),
            intrinsics=Intrinsics.from_dict(data["intrinsics"]),
            prior=CameraPrior.from_dict(prior) if prior is not None else None,
        )


@dataclass(frozen=True, eq=False)
class PointRecord:
    point: WorldPoint
    prior: PointPrior | None = None

    def to_dict(self) -> dict:
        out = {"coords": self.point.coords.tolist()}
        if self.prior is not None:
            out["prior"] = self.prior.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PointRecord":
        prior = data.get("prior")
        return cls(
            point=WorldPoint(data["coords"]),
            prior=PointPrior.from_dict(prior) if prior is not None else None,
        )


@dataclass(frozen=True)
class NetworkArrays:
    """Column view of a network used by the vectorized objective and solver."""

    n_cameras: int
    n_points: int
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    pixels: np.ndarray
    info: np.ndarray
    dof: np.ndarray
    focal: np.ndarray
    principal: np.ndarray
    cam_prior_mean: np.ndarray
    cam_prior_info: np.ndarray
    cam_prior_dof: np.ndarray
    pt_prior_mean: np.ndarray
    pt_prior_info: np.ndarray
    pt_prior_dof: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray

    @property
    def n_observations(self) -> int:
        return int(self.cam_idx.size)

    @property
    def n_parameters(self) -> int:
        return POSE_DIM * self.n_cameras + POINT_DIM * self.n_points


@dataclass(frozen=True, eq=False)
class ControlNetwork:
    cameras: tuple[CameraRecord, ...]
    points: tuple[PointRecord, ...]
    observations: tuple[Observation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "observations", tuple(self.observations))
        self._validate()

    def _validate(self) -> None:
        n_cam, n_pt = len(self.cameras), len(self.points)
        seen: set[tuple[int, int]] = set()
        observed = np.zeros(n_pt, dtype=bool)
        for k, obs in enumerate(self.observations):
            if not 0 <= obs.camera_id < n_cam:
                raise ValidationError(f"observations[{k}]: camera index {obs.camera_id} out of range (0..{n_cam - 1})")
            if not 0 <= obs.point_id < n_pt:
                raise ValidationError(f"observations[{k}]: point index {obs.point_id} out of range (0..{n_pt - 1})")
            key = (obs.point_id, obs.camera_id)
            if key in seen:
                raise ValidationError(
                    f"observations[{k}]: duplicate observation of point {obs.point_id} in camera {obs.camera_id}"
                )
            seen.add(key)
            observed[obs.point_id] = True
        if not observed.all():
            raise ValidationError(f"points[{int(np.flatnonzero(~observed)[0])}]: not observed by any camera")
        if self.observations:
            n_components = self.component_count()
            if n_components > 1:
                logger.warning("control network is not connected (%d components)", n_components)

    def component_count(self) -> int:
        """Connected components of the camera/point observation graph."""
        n_cam = len(self.cameras)
        size = n_cam + len(self.points)
        a = self.arrays
        graph = coo_matrix((np.ones(a.n_observations), (a.cam_idx, n_cam + a.pt_idx)), shape=(size, size))
        n_components, _ = connected_components(graph, directed=False)
        return int(n_components)

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.cameras), len(self.points), len(self.observations)

    @cached_property
    def arrays(self) -> NetworkArrays:
        m, n = len(self.cameras), len(self.points)
        obs = self.observations
        cam_idx = np.array([o.camera_id for o in obs], dtype=np.intp)
        pt_idx = np.array([o.point_id for o in obs], dtype=np.intp)
        covs = np.array([o.cov for o in obs], dtype=np.float64).reshape(-1, 2, 2)
        info = np.linalg.inv(covs) if len(obs) else covs
        info = 0.5 * (info + np.swapaxes(info, 1, 2))

        cam_prior_mean = np.zeros((m, POSE_DIM))
        cam_prior_info = np.zeros((m, POSE_DIM, POSE_DIM))
        cam_prior_dof = np.full(m, DEFAULT_DOF)
        for j, cam in enumerate(self.cameras):
            if cam.prior is not None:
                cam_prior_mean[j] = cam.prior.mean
                cam_prior_info[j] = cam.prior.cov_inv
                cam_prior_dof[j] = cam.prior.dof
        pt_prior_mean = np.zeros((n, POINT_DIM))
        pt_prior_info = np.zeros((n, POINT_DIM, POINT_DIM))
        pt_prior_dof = np.full(n, DEFAULT_DOF)
        for i, pt in enumerate(self.points):
            if pt.prior is not None:
                pt_prior_mean[i] = pt.prior.mean
                pt_prior_info[i] = pt.prior.cov_inv
                pt_prior_dof[i] = pt.prior.dof

        # every ordered pair of observations that share a point, diagonal included
        order = np.argsort(pt_idx, kind="stable")
        _, starts = np.unique(pt_idx[order], return_index=True)
        pair_a, pair_b = [], []
        for group in np.split(order, starts[1:]) if order.size else []:
            a, b = np.meshgrid(group, group, indexing="ij")
            pair_a.append(a.ravel())
            pair_b.append(b.ravel())
        empty = np.zeros(0, dtype=np.intp)

        return NetworkArrays(
            n_cameras=m,
            n_points=n,
            cam_idx=cam_idx,
            pt_idx=pt_idx,
            pixels=np.array([o.pixel for o in obs], dtype=np.float64).reshape(-1, 2),
            info=info,
            dof=np.array([o.dof for o in obs], dtype=np.float64),
            focal=np.array([c.intrinsics.focal_length for c in self.cameras], dtype=np.float64),
            principal=np.array([c.intrinsics.principal_point for c in self.cameras], dtype=np.float64).reshape(-1, 2),
            cam_prior_mean=cam_prior_mean,
            cam_prior_info=cam_prior_info,
            cam_prior_dof=cam_prior_dof,
            pt_prior_mean=pt_prior_mean,
            pt_prior_info=pt_prior_info,
            pt_prior_dof=pt_prior_dof,
            pair_a=np.concatenate(pair_a) if pair_a else empty,
            pair_b=np.concatenate(pair_b) if pair_b else empty,
        )

    def poses(self) -> list[CameraPose]:
        return [c.pose for c in self.cameras]

    def point_coords(self) -> np.ndarray:
        return np.array([p.point.coords for p in self.points], dtype=np.float64).reshape(-1, 3)

    def camera_positions(self) -> np.ndarray:
        return np.array([c.pose.position for c in self.cameras], dtype=np.float64).reshape(-1, 3)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "cameras": [c.to_dict() for c in self.cameras],
            "points": [p.to_dict() for p in self.points],
            "observations": [o.to_dict() for o in self.observations],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlNetwork":
        if not isinstance(data, dict):
            raise ParseError("network document must be a JSON object")
        sections = {}
        for name, record_cls in (("cameras", CameraRecord), ("points", PointRecord), ("observations", Observation)):
            raw = data.get(name)
            if not isinstance(raw, list):
                raise ParseError(f"missing or invalid section '{name}'")
            records = []
            for k, item in enumerate(raw):
                try:
                    records.append(record_cls.from_dict(item))
                except ValidationError as exc:
                    raise ValidationError(f"{name}[{k}]: {exc}") from None
                except (KeyError, TypeError, ValueError, AttributeError) as exc:
                    raise ParseError(f"{name}[{k}]: malformed record ({exc!r})") from None
            sections[name] = records
        return cls(**sections)


def load(path: str | Path) -> ControlNetwork:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    net = ControlNetwork.from_dict(data)
    logger.info("loaded %s: %d cameras, %d points, %d observations", path, *net.counts)
    return net


def dumps(net: ControlNetwork) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(net.to_dict(), indent=2) + "\n"


def save(net: ControlNetwork, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps(net), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def split_parameters(c: np.ndarray, n_cameras: int, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """View of c as camera blocks (m, 6) and point blocks (n, 3)."""
    c = np.asarray(c, dtype=np.float64)
    expected = POSE_DIM * n_cameras + POINT_DIM * n_points
    if c.shape != (expected,):
        raise DimensionMismatch(f"parameter vector has shape {c.shape}, expected ({expected},)")
    cut = POSE_DIM * n_cameras
    return c[:cut].reshape(n_cameras, POSE_DIM), c[cut:].reshape(n_points, POINT_DIM)


def pack(net: ControlNetwork) -> np.ndarray:
    """c = vec({x_j}, {y_i}): all camera blocks, then all point blocks."""
    cams = [c.pose.as_vector() for c in net.cameras]
    pts = [p.point.coords for p in net.points]
    return np.concatenate(cams + pts) if cams or pts else np.zeros(0)


def unpack(c: np.ndarray, net: ControlNetwork) -> ControlNetwork:
    cams, pts = split_parameters(c, len(net.cameras), len(net.points))
    cameras = [dataclasses.replace(rec, pose=CameraPose.from_vector(cams[j])) for j, rec in enumerate(net.cameras)]
    points = [dataclasses.replace(rec, point=WorldPoint(pts[i])) for i, rec in enumerate(net.points)]
    return ControlNetwork(cameras=cameras, points=points, observations=net.observations)


def with_dof(net: ControlNetwork, dof: float) -> ControlNetwork:
    """Copy of ``net`` with every observation and prior dof set to ``dof``."""
    dof = _check_dof(dof)

    def _prior(prior):
        return None if prior is None else dataclasses.replace(prior, dof=dof)

    return ControlNetwork(
        cameras=[dataclasses.replace(c, prior=_prior(c.prior)) for c in net.cameras],
        points=[dataclasses.replace(p, prior=_prior(p.prior)) for p in net.points],
        observations=[dataclasses.replace(o, dof=dof) for o in net.observations],
    )


@dataclass(frozen=True)
class Subnetwork:
    """A network restricted to some observations, with maps back to the parent."""

    net: ControlNetwork
    camera_map: np.ndarray
    point_map: np.ndarray
    observation_map: np.ndarray


def subset(net: ControlNetwork, observation_ids) -> Subnetwork:
    """Keep only ``observation_ids``; drop cameras and points left unobserved."""
    keep = np.unique(np.asarray(observation_ids, dtype=np.intp))
    a = net.arrays
    camera_map = np.unique(a.cam_idx[keep])
    point_map = np.unique(a.pt_idx[keep])
    cam_new = np.full(len(net.cameras), -1, dtype=np.intp)
    cam_new[camera_map] = np.arange(camera_map.size)
    pt_new = np.full(len(net.points), -1, dtype=np.intp)
    pt_new[point_map] = np.arange(point_map.size)
    observations = [
        dataclasses.replace(net.observations[k], camera_id=cam_new[a.cam_idx[k]], point_id=pt_new[a.pt_idx[k]])
        for k in keep
    ]
    sub = ControlNetwork(
        cameras=[net.cameras[j] for j in camera_map],
        points=[net.points[i] for i in point_map],
        observations=observations,
    )
    return Subnetwork(net=sub, camera_map=camera_map, point_map=point_map, observation_map=keep)


def merge(parent: ControlNetwork, part: Subnetwork, refined: ControlNetwork) -> ControlNetwork:
    """Copy the parameters of ``refined`` (shaped like ``part.net``) into ``parent``."""
    c = pack(parent)
    cams, pts = split_parameters(c, len(parent.cameras), len(parent.points))
    sub_cams, sub_pts = split_parameters(pack(refined), len(part.camera_map), len(part.point_map))
    cams = cams.copy()
    pts = pts.copy()
    cams[part.camera_map] = sub_cams
    pts[part.point_map] = sub_pts
    return unpack(np.concatenate([cams.ravel(), pts.ravel()]), parent)
