import math

import pytest

from src.models.errors import ValidationError
from src.models.params import InitialBlocks, MomentGrid, SeedbankParams
from src.services.duality_lab import (
    chain_convergence_tv,
    chain_moment_exact,
    diffusion_moment_mc,
    fixation_check,
    limit_x_moment,
    make_simulator,
    spark_statistic,
    spark_trend_ok,
    two_time_tv,
    verify_limit_duality,
    verify_prelimit_duality,
)
from src.services.seedbank_models import ancient_lines_semigroup, ancient_semigroup, blockcounting_q


def _seedbank_q(c=1.0, K=1.0, total=4):
    return blockcounting_q(SeedbankParams(c=c, K=K), InitialBlocks(0, total))


def test_chain_moment_trivial_cases():
    Q = _seedbank_q()
    assert chain_moment_exact(Q, (2, 1), 1.0, 1.0, 3.0) == pytest.approx(1.0, abs=1e-12)
    assert chain_moment_exact(Q, (2, 1), 0.3, 0.9, 0.0) == pytest.approx(0.081, abs=1e-12)
    assert chain_moment_exact(Q, (0, 0), 0.0, 0.0, 2.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        chain_moment_exact(Q, (1, 0), 0.5, 0.5, -1.0)


def test_single_line_moment_closed_form():
    Q = _seedbank_q(total=1)
    stay = (1 + math.exp(-2)) / 2
    expected = 0.3 * stay + 0.9 * (1 - stay)
    assert chain_moment_exact(Q, (1, 0), 0.3, 0.9, 1.0) == pytest.approx(expected, abs=1e-10)


def test_limit_moment_does_not_depend_on_active_count():
    sg = ancient_lines_semigroup(InitialBlocks(5, 0), 2.0)
    values = [chain_moment_exact(sg, (n, 0), 0.4, 0.7, 1.0) for n in range(1, 6)]
    assert max(values) - min(values) < 1e-12
    assert values[0] == pytest.approx(limit_x_moment(2.0, 0.4, 0.7, 1.0), abs=1e-10)


def test_limit_x_moment_at_zero_and_long_times():
    assert limit_x_moment(1.0, 0.2, 0.8, 0.0) == pytest.approx(0.2)
    assert limit_x_moment(1.0, 0.2, 0.8, 50.0) == pytest.approx(0.5, abs=1e-10)


def test_diffusion_moment_of_constant_paths():
    sim = make_simulator("seedbank", c=1.0, K=1.0, h=0.01)
    mean, sigma = diffusion_moment_mc(sim, 1.0, 1.0, 2, 1, 1.0, 100, 1)
    assert mean == 1.0 and sigma == 0.0
    mean, sigma = diffusion_moment_mc(sim, 0.3, 0.9, 0, 0, 1.0, 100, 1)
    assert mean == 1.0 and sigma == 0.0
    with pytest.raises(ValidationError):
        diffusion_moment_mc(sim, 0.5, 0.5, 1, 0, 1.0, 99, 1)


def test_single_line_duality_monte_carlo():
    Q = _seedbank_q(total=1)
    exact = chain_moment_exact(Q, (1, 0), 0.3, 0.9, 1.0)
    sim = make_simulator("seedbank", c=1.0, K=1.0, h=1e-3)
    mean, sigma = diffusion_moment_mc(sim, 0.3, 0.9, 1, 0, 1.0, 20_000, 5)
    assert abs(mean - exact) <= 4 * sigma + 5e-3


def test_make_simulator_rejects_unknown_process_and_fractional_limit_start():
    with pytest.raises(ValidationError):
        make_simulator("wright-fisher")
    sim = make_simulator("limit", K=1.0)
    with pytest.raises(ValidationError):
        sim(0.5, 0.5, [1.0], 100, 1)


def test_prelimit_duality_all_ones_point_is_exact():
    grid = MomentGrid(pairs=((1, 1), (2, 0), (3, 1)), points=((1.0, 1.0),), times=(0.5,))
    report = verify_prelimit_duality(1.0, 1.0, grid, 100, 3, h=0.01)
    assert report.passed
    assert all(cell.chain_exact == pytest.approx(1.0) for cell in report.cells)


FULL_PRELIMIT_GRID = MomentGrid(
    pairs=tuple((n, m) for n in (0, 1, 2) for m in (0, 1, 2)),
    points=((0.5, 0.5), (0.3, 0.9)),
    times=(0.1, 1.0),
)


def test_prelimit_duality_full_grid():
    report = verify_prelimit_duality(1.0, 1.0, FULL_PRELIMIT_GRID, 100_000, 11, h=1e-3)
    assert report.n_sigma == 3.0 and report.bias_allowance == 5e-3
    assert len(report.cells) == 36
    assert report.passed, report.failures


@pytest.mark.parametrize("kind", ["coalescence", "dormancy", "resuscitation"])
def test_prelimit_duality_detects_a_perturbed_rate(kind):
    report = verify_prelimit_duality(1.0, 1.0, FULL_PRELIMIT_GRID, 100_000, 11, h=1e-3,
                                     rate_factors={kind: 1.2})
    assert not report.passed


def test_two_island_duality_uses_squared_noise_rate():
    grid = MomentGrid(pairs=((0, 2), (1, 1)), points=((0.5, 0.5),), times=(0.5,))
    report = verify_prelimit_duality(1.0, 1.0, grid, 20_000, 23, h=1e-3, n_sigma=4.0,
                                     model="two-island", alpha_prime=0.8)
    assert report.passed, report.failures


def test_prelimit_duality_rejects_small_runs_and_unknown_models():
    grid = MomentGrid(pairs=((1, 0),), points=((0.5, 0.5),), times=(1.0,))
    with pytest.raises(ValidationError):
        verify_prelimit_duality(1.0, 1.0, grid, 50, 1)
    with pytest.raises(ValidationError):
        verify_prelimit_duality(1.0, 1.0, grid, 100, 1, model="moran")


def test_moment_grid_validation():
    with pytest.raises(ValidationError):
        MomentGrid(pairs=(), points=((0.5, 0.5),), times=(1.0,))
    with pytest.raises(ValidationError):
        MomentGrid(pairs=((5, 0),), points=((0.5, 0.5),), times=(1.0,))
    with pytest.raises(ValidationError):
        MomentGrid(pairs=((1, 0),), points=((1.5, 0.5),), times=(1.0,))
    with pytest.raises(ValidationError):
        MomentGrid(pairs=((1, 0),), points=((0.5, 0.5),), times=(0.0,))


@pytest.mark.parametrize("K", [1.0, 2.0])
def test_limit_duality_grid(K):
    pairs = tuple((n, m) for n in (0, 1) for m in (0, 1, 2))
    grid = MomentGrid(pairs=pairs, points=((0.0, 0.7), (1.0, 0.3)), times=(0.5, 2.0))
    report = verify_limit_duality(K, grid, 100_000, 29, n_sigma=4.0)
    assert report.bias_allowance == 0.0
    assert len(report.cells) == 24
    assert report.passed, report.failures
    trivial = [cell for cell in report.cells if (cell.n, cell.m) == (0, 0)]
    assert all(cell.chain_exact == pytest.approx(1.0) and cell.mc_mean == 1.0 for cell in trivial)


def test_limit_duality_input_checks():
    with pytest.raises(ValidationError):
        verify_limit_duality(1.0, MomentGrid(((2, 0),), ((0.0, 0.5),), (1.0,)), 100, 1)
    with pytest.raises(ValidationError):
        verify_limit_duality(1.0, MomentGrid(((1, 0),), ((0.5, 0.5),), (1.0,)), 100, 1)


def test_two_island_limit_duality():
    grid = MomentGrid(pairs=((0, 1), (0, 2), (1, 0), (1, 1)), points=((0.0, 0.6),), times=(0.5,))
    report = verify_limit_duality(1.0, grid, 4000, 31, n_sigma=4.0, model="two-island", h=0.005)
    assert report.bias_allowance > 0.0
    assert report.passed, report.failures


def test_chain_convergence_is_monotone_in_c():
    report = chain_convergence_tv([0.2, 0.1, 0.05, 0.02], 1.0, (3, 2), [0.5, 1.0, 2.0])
    assert report.passed
    assert all(report.monotone.values())
    assert report.target_met
    final = [r.tv for r in report.records if r.c == 0.02]
    assert len(final) == 3 and max(final) < 0.05


def test_chain_convergence_at_long_times():
    report = chain_convergence_tv([0.2, 0.05], 1.0, (3, 2), [20.0])
    assert all(r.tv < 0.05 for r in report.records)


def test_chain_convergence_rejects_large_c():
    with pytest.raises(ValidationError):
        chain_convergence_tv([0.8, 0.1], 1.0, (3, 2), [1.0])


def test_two_time_tv_shrinks_with_c():
    tvs = [two_time_tv(c, 1.0, (3, 2), 0.5, 1.5) for c in (0.2, 0.1, 0.05)]
    assert tvs[0] > tvs[1] > tvs[2]
    with pytest.raises(ValidationError):
        two_time_tv(0.1, 1.0, (3, 2), 1.0, 1.0)


def test_limit_semigroup_never_visits_spark_state():
    sg = ancient_lines_semigroup(InitialBlocks(1, 1), 1.0)
    for t in (0.01, 1.0, 10.0):
        assert ancient_semigroup(sg, t)[(1, 1), (2, 0)] == 0.0


def test_spark_occupation_falls_with_c():
    records = [spark_statistic(c, 1.0, 1.0, 10_000, 37) for c in (0.2, 0.1, 0.05)]
    occupation = [r.occupation_fraction for r in records]
    assert occupation[0] > occupation[1] > occupation[2] > 0.0
    assert spark_trend_ok(records)


def test_spark_trend_needs_excursions():
    from src.models.reports import SparkRecord

    flat = [SparkRecord(0.2, 10, 0.1, 0.0), SparkRecord(0.1, 10, 0.05, 0.0)]
    assert not spark_trend_ok(flat)


def test_fixation_of_limit_process():
    report = fixation_check("limit", (0.0, 0.6), 1.0, [0.5, 2.0, 8.0], 20_000, 41, n_sigma=4.0)
    assert report.passed
    assert all(r.expected == pytest.approx(0.3) for r in report.records)


def test_fixation_of_constant_start():
    report = fixation_check("seedbank", (1.0, 1.0), 1.0, [0.5, 1.0], 200, 43, h=0.01)
    assert report.passed
    assert all(r.mean == 1.0 and r.sigma == 0.0 for r in report.records)


def test_fixation_of_prelimit_and_two_island_limit():
    prelimit = fixation_check("seedbank", (0.5, 0.5), 1.0, [0.5, 2.0, 8.0], 2000, 47, h=0.01, n_sigma=4.0)
    assert prelimit.passed
    hybrid = fixation_check("two-island-limit", (0.0, 0.6), 1.0, [0.5, 2.0], 2000, 53, h=0.01, n_sigma=4.0)
    assert hybrid.passed
