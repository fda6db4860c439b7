"""Monte Carlo orderings between the three estimators on the default strip."""

import pytest

from robust_bundle_adjust.bench import BenchmarkManifest, run_benchmark
from robust_bundle_adjust.simgen import NoiseScheme

pytestmark = pytest.mark.slow

NOMINAL = "N(0,1)"
CONTAMINATED = ".9 N(0,1) + .1 N(0,50)"
STUDENT = "t(df=4)"


@pytest.fixture(scope="module")
def result():
    manifest = BenchmarkManifest(
        schemes=(NoiseScheme.nominal(), NoiseScheme.contaminated(0.1, 50.0), NoiseScheme.student(4.0)),
        n_runs=100,
        base_seed=2024,
    )
    return run_benchmark(manifest, n_jobs=-1)


@pytest.fixture(scope="module")
def rows(result):
    return {(r["scheme"], r["algorithm"]): r for r in result.rows}


def _means(rows, scheme, column):
    return tuple(rows[(scheme, a)][column] for a in ("l2", "sigma-edit", "rst"))


def test_no_failures(rows):
    assert all(r["n_failed"] == 0 for r in rows.values())


def test_every_solve_converges(result):
    assert [c for c in result.cells if not c.converged] == []


def test_accepted_objectives_strictly_decrease(result):
    assert [c for c in result.cells if not c.monotone] == []


def test_student_wins_world_error_under_contamination(rows):
    l2, edit, rst = _means(rows, CONTAMINATED, "world_mean")
    assert rst < 0.25 * l2
    assert rst < edit < l2


def test_student_wins_camera_error_under_contamination(rows):
    l2, edit, rst = _means(rows, CONTAMINATED, "camera_mean")
    assert rst < edit < l2


def test_student_matches_l2_under_nominal_noise(rows):
    l2, edit, rst = _means(rows, NOMINAL, "world_mean")
    assert 0.7 <= rst / l2 <= 1.5
    assert 0.7 <= edit / l2 <= 1.5


def test_student_wins_under_student_noise(rows):
    for column in ("world_mean", "camera_mean"):
        l2, _, rst = _means(rows, STUDENT, column)
        assert rst < l2


def test_student_iterations_cost_about_the_same(result):
    ms = {t["algorithm"]: t["mean_iteration_ms"] for t in result.timings}
    assert ms["rst"] <= 1.5 * ms["l2"]
