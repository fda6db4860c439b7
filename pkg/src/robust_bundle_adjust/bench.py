"""Monte Carlo comparison of L2, sigma-edit and Student adjustments on simulated strips.

Every (scheme, run) cell generates its scene from ``[base_seed, run]`` and its
noise from ``[base_seed, run, scheme + 1]``, then runs every algorithm on the
same noisy network. Cells are independent and run in parallel; results are
aggregated in manifest order, so the tables depend on the manifest only.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from robust_bundle_adjust import export, metrics
from robust_bundle_adjust.errors import BundleAdjustError, IoError, ParseError, ValidationError
from robust_bundle_adjust.network import ControlNetwork
from robust_bundle_adjust.objective import ObjectiveKind
from robust_bundle_adjust.outlier import EditRuleConfig, sigma_edit_solve
from robust_bundle_adjust.simgen import NoiseKind, NoiseScheme, SceneConfig, apply_noise, generate_scene
from robust_bundle_adjust.solver import SolverConfig, SolverReport, solve

logger = logging.getLogger(__name__)


class Algorithm(str, enum.Enum):
    L2 = "l2"
    SIGMA_EDIT = "sigma-edit"
    RST = "rst"

    @property
    def label(self) -> str:
        return {"l2": "L2-BA", "sigma-edit": "2σ-BA", "rst": "RST-BA"}[self.value]


def table_schemes() -> tuple[NoiseScheme, ...]:
    """Nominal, the six contaminated mixtures, and Student t with 4 dof."""
    mixtures = [
        NoiseScheme.contaminated(p, phi) for phi in (4.0, 10.0, 50.0) for p in (0.05, 0.1)
    ]
    return (NoiseScheme.nominal(), *mixtures, NoiseScheme.student(4.0))


def default_solver_config() -> SolverConfig:
    return SolverConfig(lambda0=1.0)


@dataclass(frozen=True)
class BenchmarkManifest:
    scene: SceneConfig = field(default_factory=SceneConfig)
    schemes: tuple[NoiseScheme, ...] = field(default_factory=table_schemes)
    algorithms: tuple[Algorithm, ...] = (Algorithm.L2, Algorithm.SIGMA_EDIT, Algorithm.RST)
    n_runs: int = 100
    base_seed: int = 0
    output_dir: str = "bench-out"
    solver: SolverConfig = field(default_factory=default_solver_config)
    edit: EditRuleConfig = field(default_factory=EditRuleConfig)
    baseline: dict | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "schemes", tuple(self.schemes))
        try:
            object.__setattr__(self, "algorithms", tuple(Algorithm(a) for a in self.algorithms))
        except ValueError as exc:
            raise ValidationError(f"algorithms: {exc}") from None
        if self.n_runs < 1:
            raise ValidationError(f"n_runs must be >= 1, got {self.n_runs}")
        if not self.schemes:
            raise ValidationError("schemes must not be empty")
        if not self.algorithms:
            raise ValidationError("algorithms must not be empty")
        if self.baseline is not None:
            if set(self.baseline) != {"world", "camera"}:
                raise ValidationError("baseline must have exactly the keys 'world' and 'camera'")
            for key, value in self.baseline.items():
                if not float(value) > 0:
                    raise ValidationError(f"baseline {key} must be > 0, got {value}")

    def to_dict(self) -> dict:
        out = {
            "scene": self.scene.to_dict(),
            "schemes": [s.to_dict() for s in self.schemes],
            "algorithms": [a.value for a in self.algorithms],
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
            "solver": self.solver.to_dict(),
            "edit": dataclasses.asdict(self.edit),
        }
        if self.baseline is not None:
            out["baseline"] = dict(self.baseline)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkManifest":
        if not isinstance(data, dict):
            raise ParseError("manifest must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"manifest: unknown keys {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        try:
            if "scene" in kwargs:
                kwargs["scene"] = SceneConfig.from_dict(kwargs["scene"])
            if "schemes" in kwargs:
                kwargs["schemes"] = tuple(NoiseScheme.from_dict(s) for s in kwargs["schemes"])
            if "solver" in kwargs:
                kwargs["solver"] = SolverConfig.from_dict(kwargs["solver"])
            if "edit" in kwargs:
                kwargs["edit"] = EditRuleConfig(**kwargs["edit"])
        except TypeError as exc:
            raise ParseError(f"manifest: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(data)


def run_algorithm(
    net: ControlNetwork, algorithm: Algorithm, solver_config: SolverConfig, edit_config: EditRuleConfig
) -> tuple[ControlNetwork, list[SolverReport]]:
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.SIGMA_EDIT:
        result = sigma_edit_solve(net, solver_config, edit_config)
        return result.network, result.reports
    kind = ObjectiveKind.STUDENT_T if algorithm is Algorithm.RST else ObjectiveKind.GAUSSIAN_L2
    refined, report = solve(net, dataclasses.replace(solver_config, kind=kind))
    return refined, [report]


@dataclass(frozen=True)
class CellResult:
    scheme: int
    run: int
    algorithm: Algorithm
    world_mse: float
    camera_mse: float
    iterations: int
    iteration_ms: float
    converged: bool = True
    monotone: bool = True
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _strictly_decreasing(values: list[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def scene_seed(base_seed: int, run: int) -> int:
    return int(np.random.SeedSequence([base_seed, run]).generate_state(1)[0])


def noise_seed(base_seed: int, run: int, scheme: int) -> np.random.SeedSequence:
    """Scheme 0 is reserved for the nominal baseline cells."""
    return np.random.SeedSequence([base_seed, run, scheme])


def run_cell(
    scene: SceneConfig,
    scheme: NoiseScheme,
    scheme_idx: int,
    run: int,
    algorithms,
    solver_config: SolverConfig,
    edit_config: EditRuleConfig,
    base_seed: int,
) -> list[CellResult]:
    net, truth = generate_scene(dataclasses.replace(scene, rng_seed=scene_seed(base_seed, run)))
    noisy, truth = apply_noise(net, truth, scheme, noise_seed(base_seed, run, scheme_idx + 1))
    results = []
    for algorithm in algorithms:
        try:
            refined, reports = run_algorithm(noisy, algorithm, solver_config, edit_config)
        except BundleAdjustError as exc:
            logger.warning("%s run %d %s failed: %s", scheme.label, run, algorithm.value, exc)
            failed = CellResult(scheme_idx, run, algorithm, np.nan, np.nan, 0, np.nan, converged=False, error=str(exc))
            results.append(failed)
            continue
        records = [r for rep in reports for r in rep.records]
        results.append(
            CellResult(
                scheme=scheme_idx,
                run=run,
                algorithm=algorithm,
                world_mse=metrics.world_mse(refined, truth),
                camera_mse=metrics.camera_mse(refined, truth),
                iterations=len(records),
                iteration_ms=float(np.mean([r.millis for r in records])) if records else 0.0,
                converged=all(rep.converged for rep in reports),
                monotone=all(_strictly_decreasing(rep.accepted_objectives()) for rep in reports),
            )
        )
    return results


@dataclass
class BenchmarkResult:
    manifest: BenchmarkManifest
    baseline: dict
    cells: list[CellResult]
    rows: list[dict]
    timings: list[dict]


def _summary(values: np.ndarray) -> tuple[float, float, float]:
    if values.size == 0:
        return np.nan, np.nan, np.nan
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), float(np.median(values)), std


def aggregate(manifest: BenchmarkManifest, cells: list[CellResult], baseline: dict) -> list[dict]:
    rows = []
    for s_idx, scheme in enumerate(manifest.schemes):
        for algorithm in manifest.algorithms:
            group = [c for c in cells if c.scheme == s_idx and c.algorithm is algorithm]
            ok = [c for c in group if not c.failed]
            world = np.array([metrics.relative_mse(c.world_mse, baseline["world"]) for c in ok])
            camera = np.array([metrics.relative_mse(c.camera_mse, baseline["camera"]) for c in ok])
            w_mean, w_median, w_std = _summary(world)
            c_mean, c_median, c_std = _summary(camera)
            rows.append(
                {
                    "scheme": scheme.label,
                    "algorithm": algorithm.value,
                    "n_runs": len(ok),
                    "n_failed": len(group) - len(ok),
                    "world_mean": w_mean,
                    "world_median": w_median,
                    "world_std": w_std,
                    "camera_mean": c_mean,
                    "camera_median": c_median,
                    "camera_std": c_std,
                }
            )
    return rows


def _timings(manifest: BenchmarkManifest, cells: list[CellResult]) -> list[dict]:
    out = []
    for algorithm in manifest.algorithms:
        ok = [c for c in cells if c.algorithm is algorithm and not c.failed and c.iterations]
        total = sum(c.iterations for c in ok)
        mean_ms = sum(c.iteration_ms * c.iterations for c in ok) / total if total else 0.0
        out.append({"algorithm": algorithm.value, "iterations": total, "mean_iteration_ms": mean_ms})
    return out


def _execute(tasks: list[tuple], n_jobs: int, progress: bool, desc: str) -> list[CellResult]:
    jobs = Parallel(n_jobs=n_jobs, return_as="generator")(delayed(run_cell)(*task) for task in tasks)
    out: list[CellResult] = []
    for batch in tqdm(jobs, total=len(tasks), desc=desc, disable=not progress, leave=False):
        out.extend(batch)
    return out


def run_benchmark(manifest: BenchmarkManifest, n_jobs: int = 1, progress: bool = False) -> BenchmarkResult:
    common = (manifest.solver, manifest.edit, manifest.base_seed)
    tasks = [
        (manifest.scene, scheme, s_idx, run, manifest.algorithms, *common)
        for s_idx, scheme in enumerate(manifest.schemes)
        for run in range(manifest.n_runs)
    ]
    logger.info(
        "benchmark: %d schemes x %d runs x %d algorithms", len(manifest.schemes), manifest.n_runs, len(manifest.algorithms)
    )
    cells = _execute(tasks, n_jobs, progress, "cellules")
    unconverged = sum(1 for c in cells if not c.failed and not c.converged)
    if unconverged:
        logger.warning("%d solves stopped at max_iters", unconverged)

    baseline = manifest.baseline
    if baseline is None:
        baseline_cells = [
            c
            for c in cells
            if c.algorithm is Algorithm.L2 and manifest.schemes[c.scheme].kind is NoiseKind.NOMINAL and not c.failed
        ]
        if not baseline_cells:
            # dedicated L2 runs under nominal noise, on noise streams no scheme uses
            nominal = dataclasses.replace(manifest.schemes[0], kind=NoiseKind.NOMINAL, p=0.0)
            base_tasks = [
                (manifest.scene, nominal, -1, run, (Algorithm.L2,), *common) for run in range(manifest.n_runs)
            ]
            baseline_cells = [c for c in _execute(base_tasks, n_jobs, progress, "référence") if not c.failed]
        if not baseline_cells:
            raise ValidationError("no successful nominal L2 run to compute the baseline")
        baseline = {
            "world": float(np.mean([c.world_mse for c in baseline_cells])),
            "camera": float(np.mean([c.camera_mse for c in baseline_cells])),
        }
    logger.info("baseline MSE0: world %.6g, camera %.6g", baseline["world"], baseline["camera"])

    return BenchmarkResult(
        manifest=manifest,
        baseline=baseline,
        cells=cells,
        rows=aggregate(manifest, cells, baseline),
        timings=_timings(manifest, cells),
    )


def _format_cell(mean: float, std: float) -> str:
    if not np.isfinite(mean):
        return "n/a"

    def fmt(v: float) -> str:
        return f"{v:.0f}" if abs(v) >= 100 else f"{v:.1f}"

    return f"{fmt(mean)} ({fmt(std)})"


def render_table(rows: list[dict]) -> str:
    """World and camera blocks side by side, one line per scheme, entries 'mean (std)'."""
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    algorithms = list(dict.fromkeys(r["algorithm"] for r in rows))
    by_key = {(r["scheme"], r["algorithm"]): r for r in rows}
    labels = [Algorithm(a).label for a in algorithms]
    header = ["Bruit"] + [f"Monde {l}" for l in labels] + [f"Caméra {l}" for l in labels]
    lines = []
    for scheme in schemes:
        line = [scheme]
        for prefix in ("world", "camera"):
            for a in algorithms:
                r = by_key.get((scheme, a))
                line.append(_format_cell(r[f"{prefix}_mean"], r[f"{prefix}_std"]) if r else "n/a")
        lines.append(line)
    widths = [max(len(row[i]) for row in [header, *lines]) for i in range(len(header))]

    def fmt_row(row: list[str]) -> str:
        return " | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt_row(header), rule, *(fmt_row(l) for l in lines)]) + "\n"


def write_outputs(result: BenchmarkResult, out_dir: str | Path, xlsx: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "results.csv", out_dir / "table.txt", out_dir / "baseline.json", out_dir / "timing.csv"]
        export.write_csv(paths[0], export.RESULT_COLUMNS, result.rows)
        paths[1].write_text(render_table(result.rows), encoding="utf-8")
        paths[2].write_text(json.dumps(result.baseline, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write benchmark outputs to {out_dir}: {exc.strerror or exc}") from exc
    export.write_csv(paths[3], export.TIMING_COLUMNS, result.timings)
    if xlsx:
        paths.append(out_dir / "results.xlsx")
        export.write_xlsx(
            paths[-1],
            {
                "Résultats": (export.RESULT_COLUMNS, result.rows),
                "Temps": (export.TIMING_COLUMNS, result.timings),
            },
        )
    return paths
