"""Command-line interface for robust-bundle-adjust."""

import dataclasses
import json
import logging
from pathlib import Path
from typing import Annotated, Optional

import click
import numpy as np
import typer

from robust_bundle_adjust import __version__, bench, export, network
from robust_bundle_adjust.errors import BundleAdjustError, IoError, ParseError, ValidationError
from robust_bundle_adjust.metrics import camera_mse, triangulation_error, world_mse
from robust_bundle_adjust.objective import influence_curves
from robust_bundle_adjust.outlier import EditRuleConfig, sigma_edit_solve
from robust_bundle_adjust.simgen import GroundTruth, NoiseScheme, SceneConfig, apply_noise, generate_scene
from robust_bundle_adjust.solver import SolverConfig

try:
    from typer._click import exceptions as _typer_click
except ImportError:  # typer < 0.26 raises click's own exceptions
    _typer_click = click.exceptions

_USAGE_ERRORS = (click.ClickException, _typer_click.ClickException)
_ABORTS = (click.exceptions.Abort, _typer_click.Abort)

app = typer.Typer(
    name="robust-bundle-adjust",
    help="Ajustement de faisceaux robuste (Student's t), simulation et banc d'essai Monte Carlo.",
    add_completion=False,
    no_args_is_help=True,
)


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _banner(title: str) -> None:
    typer.echo(f"Robust Bundle Adjust v{__version__} : {title}")
    typer.echo("=" * 50)


@app.callback()
def callback(
    verbose: Annotated[
        bool,
        typer.Option("--verbose", "-v", help="Affiche le détail des itérations (niveau DEBUG)"),
    ] = False,
) -> None:
    """Ajustement de faisceaux L2, 2σ-edit et Student's t."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


@app.command()
def simulate(
    out: Annotated[
        Path,
        typer.Option("--out", "-o", help="Fichier réseau de contrôle (.json) à écrire"),
    ],
    config: Annotated[
        Optional[Path],
        typer.Option("--config", "-c", help="Configuration JSON avec les sections 'scene' et 'noise'"),
    ] = None,
    seed: Annotated[
        Optional[int],
        typer.Option("--seed", help="Graine de la scène (remplace scene.rng_seed)"),
    ] = None,
    truth: Annotated[
        Optional[Path],
        typer.Option("--truth", help="Fichier vérité terrain (défaut : <out>.truth.json)"),
    ] = None,
    exact: Annotated[
        bool,
        typer.Option("--exact", help="Observations exactes, sans bruit ni perturbation"),
    ] = False,
) -> None:
    """Génère une bande orbitale synthétique et ses observations bruitées."""
    data = _read_json(config) if config is not None else {}
    unknown = set(data) - {"scene", "noise"}
    if unknown:
        raise ValidationError(f"{config}: unknown sections {', '.join(sorted(unknown))}")
    scene = SceneConfig.from_dict(data.get("scene", {}))
    if seed is not None:
        scene = dataclasses.replace(scene, rng_seed=seed)
    scheme = NoiseScheme.from_dict(data.get("noise", {}))

    net, gt = generate_scene(scene)
    if not exact:
        net, gt = apply_noise(net, gt, scheme, np.random.SeedSequence([scene.rng_seed, 1]))
    truth = truth or out.with_suffix(".truth.json")
    network.save(net, out)
    gt.save(truth)

    _banner("simulation")
    typer.echo(f"Bruit : {'aucun' if exact else scheme.label}")
    typer.echo(f"Caméras : {len(net.cameras)}, points : {len(net.points)}, observations : {len(net.observations)}")
    typer.echo(f"Réseau : {out}")
    typer.echo(f"Vérité terrain : {truth}")


def _solver_config(config: Optional[Path], lambda0: Optional[float], max_iters: Optional[int]) -> SolverConfig:
    cfg = SolverConfig.from_dict(_read_json(config)) if config is not None else bench.default_solver_config()
    if lambda0 is not None:
        cfg = dataclasses.replace(cfg, lambda0=lambda0)
    if max_iters is not None:
        cfg = dataclasses.replace(cfg, max_iters=max_iters)
    return cfg


@app.command()
def solve(
    net_path: Annotated[
        Path,
        typer.Argument(help="Réseau de contrôle (.json)", exists=True, readable=True, dir_okay=False),
    ],
    out: Annotated[
        Path,
        typer.Option("--out", "-o", help="Réseau ajusté (.json) à écrire"),
    ],
    algorithm: Annotated[
        bench.Algorithm,
        typer.Option("--algorithm", "-a", help="Estimateur", case_sensitive=False),
    ] = bench.Algorithm.RST,
    config: Annotated[
        Optional[Path],
        typer.Option("--config", "-c", help="Paramètres du solveur (JSON)"),
    ] = None,
    dof: Annotated[
        Optional[float],
        typer.Option("--dof", help="Degrés de liberté imposés à toutes les observations et a priori"),
    ] = None,
    lambda0: Annotated[Optional[float], typer.Option("--lambda0", help="Amortissement initial")] = None,
    max_iters: Annotated[Optional[int], typer.Option("--max-iters", help="Nombre maximal d'itérations")] = None,
    k_sigma: Annotated[float, typer.Option("--k-sigma", help="Seuil de la règle σ-edit")] = 2.0,
    report: Annotated[
        Optional[Path],
        typer.Option("--report", help="Journal des itérations (CSV, défaut : <out>.iterations.csv)"),
    ] = None,
    removed: Annotated[
        Optional[Path],
        typer.Option("--removed", help="Observations supprimées par σ-edit (CSV)"),
    ] = None,
    truth: Annotated[
        Optional[Path],
        typer.Option("--truth", help="Vérité terrain pour calculer les MSE"),
    ] = None,
) -> None:
    """Ajuste un réseau de contrôle (L2, σ-edit ou Student's t)."""
    net = network.load(net_path)
    if dof is not None:
        net = network.with_dof(net, dof)
    cfg = _solver_config(config, lambda0, max_iters)

    _banner(f"ajustement {algorithm.label}")
    before = triangulation_error(net)

    if algorithm is bench.Algorithm.SIGMA_EDIT:
        result = sigma_edit_solve(net, cfg, EditRuleConfig(k_sigma=k_sigma))
        refined, reports = result.network, result.reports
        typer.echo(f"Observations supprimées : {len(result.removed)}")
        if removed is not None:
            result.to_csv(removed)
    else:
        refined, reports = bench.run_algorithm(net, algorithm, cfg, EditRuleConfig(k_sigma=k_sigma))

    final = reports[-1]
    network.save(refined, out)
    report = report or out.with_suffix(".iterations.csv")
    final.to_csv(report)
    after = triangulation_error(refined)

    typer.echo(f"Statut : {final.status}, {final.iterations} itérations ({final.accepted_steps} acceptées)")
    typer.echo(f"Objectif : {final.initial_objective:.6g} -> {final.final_objective:.6g}")
    typer.echo(f"Triangulation (médiane) : {before.median:.6g} -> {after.median:.6g}")
    if truth is not None:
        gt = GroundTruth.load(truth)
        typer.echo(f"MSE points : {world_mse(refined, gt):.6g}, MSE caméras : {camera_mse(refined, gt):.6g}")
    typer.echo(f"Réseau ajusté : {out}")
    typer.echo(f"Journal : {report}")


@app.command("bench")
def bench_cmd(
    config: Annotated[
        Optional[Path],
        typer.Option("--config", "-c", help="Manifeste du banc d'essai (JSON)"),
    ] = None,
    out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Dossier de sortie")] = None,
    runs: Annotated[Optional[int], typer.Option("--runs", "-n", help="Nombre de tirages par cellule")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Graine de base")] = None,
    dof: Annotated[Optional[float], typer.Option("--dof", help="Degrés de liberté du modèle Student")] = None,
    jobs: Annotated[
        int,
        typer.Option("--jobs", "-j", envvar="RBA_JOBS", help="Nombre de processus parallèles"),
    ] = 1,
    xlsx: Annotated[bool, typer.Option("--xlsx", help="Écrit aussi results.xlsx")] = False,
    progress: Annotated[bool, typer.Option("--progress/--no-progress", help="Barre de progression")] = True,
) -> None:
    """Lance le banc d'essai Monte Carlo (tableau µ (σ) des MSE relatives)."""
    manifest = bench.BenchmarkManifest.load(config) if config is not None else bench.BenchmarkManifest()
    overrides = {}
    if runs is not None:
        overrides["n_runs"] = runs
    if seed is not None:
        overrides["base_seed"] = seed
    if out is not None:
        overrides["output_dir"] = str(out)
    if dof is not None:
        overrides["schemes"] = tuple(dataclasses.replace(s, dof=dof, prior_dof=dof) for s in manifest.schemes)
    manifest = dataclasses.replace(manifest, **overrides)

    _banner("banc d'essai")
    typer.echo(f"Schémas de bruit : {len(manifest.schemes)}, tirages : {manifest.n_runs}, processus : {jobs}")
    result = bench.run_benchmark(manifest, n_jobs=jobs, progress=progress)
    paths = bench.write_outputs(result, manifest.output_dir, xlsx=xlsx)

    typer.echo(bench.render_table(result.rows))
    failed = sum(r["n_failed"] for r in result.rows)
    if failed:
        typer.echo(f"Échecs exclus : {failed}")
    for path in paths:
        typer.echo(f"Écrit : {path}")


@app.command()
def report(
    results: Annotated[
        Optional[Path],
        typer.Argument(help="results.csv produit par 'bench'", exists=True, readable=True, dir_okay=False),
    ] = None,
    out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Tableau texte à écrire")] = None,
    xlsx: Annotated[Optional[Path], typer.Option("--xlsx", help="Classeur Excel à écrire")] = None,
    curves: Annotated[
        Optional[Path],
        typer.Option("--curves", help="Courbes -log f et d'influence (CSV) à écrire"),
    ] = None,
    dof: Annotated[float, typer.Option("--dof", help="Degrés de liberté des courbes Student")] = 4.0,
) -> None:
    """Réaffiche un résultat de banc d'essai et exporte les courbes d'influence."""
    if results is None and curves is None:
        raise click.UsageError("indiquer un fichier results.csv ou --curves")
    if results is not None:
        rows = export.read_csv(results, export.RESULT_COLUMNS)
        table = bench.render_table(rows)
        typer.echo(table)
        if out is not None:
            try:
                out.write_text(table, encoding="utf-8")
            except OSError as exc:
                raise IoError(f"cannot write {out}: {exc.strerror or exc}") from exc
        if xlsx is not None:
            export.write_xlsx(xlsx, {"Résultats": (export.RESULT_COLUMNS, rows)})
    if curves is not None:
        table = influence_curves(np.linspace(-10.0, 10.0, 201), dof)
        rows = [{key: float(col[k]) for key, col in table.items()} for k in range(table["u"].size)]
        export.write_csv(curves, export.CURVE_COLUMNS, rows)
        typer.echo(f"Courbes : {curves}")


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point; exit codes 1 usage, 2 data error, 3 solver failure."""
    try:
        code = app(args=argv, prog_name="robust-bundle-adjust", standalone_mode=False)
    except _ABORTS:
        typer.echo("Interrompu.", err=True)
        return 1
    except _USAGE_ERRORS as exc:
        exc.show()
        return 1
    except BundleAdjustError as exc:
        typer.echo(f"Erreur : {exc}", err=True)
        return exc.exit_code
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    raise SystemExit(main())
