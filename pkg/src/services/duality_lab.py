"""Numerical evidence for the moment dualities and scaling limits of the seed bank model.

Chain sides are always exact (matrix exponentials), so a failing comparison points at the
frequency-process side or at a wrong rate. Frequency sides are Monte Carlo means with their
standard errors.
"""

import logging
import math
from collections.abc import Callable, Sequence

import numpy as np

from src.constants import DEFAULT_BIAS_ALLOWANCE, DEFAULT_H, DEFAULT_N_SIGMA, DEFAULT_STEP_BUDGET
from src.models.diffusion import DiffusionState, Ensemble, JumpState
from src.models.errors import ValidationError
from src.models.matrices import RateMatrix, State
from src.models.params import InitialBlocks, MomentGrid, SeedbankParams
from src.models.reports import (
    ConvergenceReport,
    DualityCell,
    DualityReport,
    FixationRecord,
    FixationReport,
    JointTvRecord,
    SparkRecord,
    TvRecord,
)
from src.services.diffusion_sim import (
    sample_limit_ensemble,
    sample_two_island_limit_ensemble,
    simulate_ensemble,
)
from src.services.markov_core import expm_conservative, marginal, sample_path, total_variation
from src.services.seedbank_models import (
    DegenerateSemigroup,
    ancient_lines_semigroup,
    ancient_semigroup,
    blockcounting_q,
    imbalanced_semigroup,
    restricted_gbar,
    structured_q,
)
from src.utils.parallel import map_batches, replicate_batches
from src.utils.rng import RngStream, derive_seed

log = logging.getLogger(__name__)

PROCESSES = ("seedbank", "two-island", "limit", "two-island-limit")
MIN_REPLICATES = 100
SPARK_STATE: State = (2, 0)
SPARK_EXCURSION = ((1, 1), (2, 0), (1, 0))
# Exact comparisons (constant paths, trivial moments) still differ by float round-off.
ROUNDOFF = 1e-12

Simulator = Callable[[float, float, Sequence[float], int, int], Ensemble]


def _moment_vector(space_states: Sequence[State], x: float, y: float) -> np.ndarray:
    # Python's 0.0 ** 0 == 1.0 gives the 0^0 = 1 convention.
    return np.array([x ** n * y ** m for n, m in space_states])


def chain_moment_exact(
    source: RateMatrix | DegenerateSemigroup, start: State, x: float, y: float, t: float
) -> float:
    """E_(n,m)[x^N_t y^M_t] for a Q-matrix chain or a degenerate limit semigroup."""
    if t < 0:
        raise ValidationError(f"Time must be non-negative, got {t}")
    if isinstance(source, DegenerateSemigroup):
        law = ancient_semigroup(source, t).row(start)
    else:
        law = marginal(source, start, t)
    return float(law @ _moment_vector(source.space.states, x, y))


def limit_x_moment(K: float, x: float, y: float, t: float) -> float:
    """E[X(t)^n] of the limit process for any n >= 1: the dual line sits at (1, 0) or (0, 1)."""
    gbar = restricted_gbar(K, 1)
    row = expm_conservative(gbar, t).row((1, 0))
    return x * float(row[gbar.space.index((1, 0))]) + y * float(row[gbar.space.index((0, 1))])


def ensemble_moment(ensemble: Ensemble, n: int, m: int, t: float) -> tuple[float, float]:
    xs, ys = ensemble.at(t)
    values = xs ** n * ys ** m
    sigma = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), sigma


def diffusion_moment_mc(
    simulator: Simulator,
    x: float,
    y: float,
    n: int,
    m: int,
    t: float,
    replicates: int,
    master_seed: int,
) -> tuple[float, float]:
    """Sample mean and standard error of X(t)^n Y(t)^m started from (x, y)."""
    if replicates < MIN_REPLICATES:
        raise ValidationError(f"replicates must be at least {MIN_REPLICATES}, got {replicates}")
    return ensemble_moment(simulator(x, y, [t], replicates, master_seed), n, m, t)


def make_simulator(
    process: str,
    c: float = 1.0,
    K: float = 1.0,
    h: float = DEFAULT_H,
    alpha_prime: float = 0.0,
    diffusion: float = 1.0,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Simulator:
    """Bind process parameters into sim(x, y, times, replicates, master_seed) -> Ensemble."""
    if process not in PROCESSES:
        raise ValidationError(f"Unknown process {process!r}; expected one of {PROCESSES}")

    def sim(x: float, y: float, times: Sequence[float], replicates: int, master_seed: int) -> Ensemble:
        grid = sorted({0.0, *times})
        if process in ("seedbank", "two-island"):
            return simulate_ensemble(process, c, K, DiffusionState(x, y), grid, h, replicates, master_seed,
                                     alpha_prime=alpha_prime, workers=workers, step_budget=step_budget)
        start = JumpState(_as_indicator(x), y)
        if process == "limit":
            ensemble, _ = sample_limit_ensemble(start, K, grid, replicates, master_seed, workers=workers)
            return ensemble
        return sample_two_island_limit_ensemble(start, K, grid, h, replicates, master_seed,
                                                diffusion=diffusion, workers=workers, step_budget=step_budget)

    return sim


def _as_indicator(x: float) -> int:
    if x not in (0.0, 1.0):
        raise ValidationError(f"Limit starts need x in {{0, 1}}, got {x}")
    return int(x)


def _fill_cells(
    grid: MomentGrid,
    chain_value: Callable[[tuple[int, int], float, float, float], float],
    simulator: Simulator,
    replicates: int,
    master_seed: int,
    n_sigma: float,
    bias_allowance: float,
) -> list[DualityCell]:
    cells = []
    for point_index, (x, y) in enumerate(grid.points):
        seed = derive_seed(master_seed, point_index)
        ensemble = simulator(x, y, grid.times, replicates, seed)
        for t in grid.times:
            for n, m in grid.pairs:
                exact = chain_value((n, m), x, y, t)
                mean, sigma = ensemble_moment(ensemble, n, m, t)
                passed = abs(exact - mean) <= n_sigma * sigma + bias_allowance + ROUNDOFF
                cells.append(DualityCell(n=n, m=m, x=x, y=y, t=t, chain_exact=exact,
                                         mc_mean=mean, mc_sigma=sigma, passed=passed))
                if not passed:
                    log.info("duality cell failed: (n,m)=(%d,%d) (x,y)=(%g,%g) t=%g exact=%.6f mc=%.6f±%.2g",
                             n, m, x, y, t, exact, mean, sigma)
    return cells


def verify_prelimit_duality(
    c: float,
    K: float,
    grid: MomentGrid,
    replicates: int,
    master_seed: int,
    h: float = DEFAULT_H,
    bias_allowance: float = DEFAULT_BIAS_ALLOWANCE,
    n_sigma: float = DEFAULT_N_SIGMA,
    model: str = "seedbank",
    alpha_prime: float = 0.0,
    rate_factors: dict[str, float] | None = None,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> DualityReport:
    """Compare E[X_t^n Y_t^m] from Euler-Maruyama with the exact block-counting moments.

    For the two-island model the frequency noise α' on Y pairs with coalescence at rate α'^2
    in the dormant island. rate_factors perturbs the chain rates for sensitivity checks.
    """
    if replicates < MIN_REPLICATES:
        raise ValidationError(f"replicates must be at least {MIN_REPLICATES}, got {replicates}")
    init = InitialBlocks(0, max(1, grid.max_total))
    if model == "two-island":
        Q = structured_q(SeedbankParams(c=c, K=K, alpha_prime=alpha_prime ** 2), init, rate_factors)
    elif model == "seedbank":
        Q = blockcounting_q(SeedbankParams(c=c, K=K), init, rate_factors)
    else:
        raise ValidationError(f"Unknown model {model!r}")
    laws = {t: expm_conservative(Q, t) for t in grid.times}
    moments = {point: _moment_vector(Q.space.states, *point) for point in grid.points}

    def chain_value(pair: tuple[int, int], x: float, y: float, t: float) -> float:
        return float(laws[t].row(pair) @ moments[(x, y)])

    simulator = make_simulator(model, c=c, K=K, h=h, alpha_prime=alpha_prime,
                               workers=workers, step_budget=step_budget)
    cells = _fill_cells(grid, chain_value, simulator, replicates, master_seed, n_sigma, bias_allowance)
    report = DualityReport(tuple(cells), n_sigma=n_sigma, bias_allowance=bias_allowance, model=model)
    log.info("prelimit duality (%s, c=%g, K=%g): %d/%d cells pass",
             model, c, K, len(cells) - len(report.failures), len(cells))
    return report


def verify_limit_duality(
    K: float,
    grid: MomentGrid,
    replicates: int,
    master_seed: int,
    n_sigma: float = DEFAULT_N_SIGMA,
    model: str = "seedbank",
    h: float = DEFAULT_H,
    bias_allowance: float | None = None,
    diffusion: float = 1.0,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> DualityReport:
    """Compare moments of the limit frequency process with its dual limit chain.

    The seed bank limit is sampled exactly, so no bias allowance applies; the two-island
    limit uses the hybrid sampler and the default Euler-Maruyama allowance.
    """
    for n, _ in grid.pairs:
        if n not in (0, 1):
            raise ValidationError(f"Limit duality needs n in {{0, 1}}, got {n}")
    for x, _ in grid.points:
        _as_indicator(x)
    m_max = max(1, grid.max_total)
    if model == "seedbank":
        source: RateMatrix | DegenerateSemigroup = restricted_gbar(K, m_max)
        process = "limit"
        allowance = 0.0 if bias_allowance is None else bias_allowance
    elif model == "two-island":
        source = imbalanced_semigroup(InitialBlocks(0, m_max), K)
        process = "two-island-limit"
        allowance = DEFAULT_BIAS_ALLOWANCE if bias_allowance is None else bias_allowance
    else:
        raise ValidationError(f"Unknown model {model!r}")

    def chain_value(pair: tuple[int, int], x: float, y: float, t: float) -> float:
        return chain_moment_exact(source, pair, x, y, t)

    simulator = make_simulator(process, K=K, h=h, diffusion=diffusion, workers=workers, step_budget=step_budget)
    cells = _fill_cells(grid, chain_value, simulator, replicates, master_seed, n_sigma, allowance)
    report = DualityReport(tuple(cells), n_sigma=n_sigma, bias_allowance=allowance, model=model)
    log.info("limit duality (%s, K=%g): %d/%d cells pass",
             model, K, len(cells) - len(report.failures), len(cells))
    return report


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _check_c_list(c_list: Sequence[float]) -> list[float]:
    if not c_list:
        raise ValidationError("c list must not be empty")
    if any(not 0 < c <= 0.5 for c in c_list):
        raise ValidationError(f"Convergence experiments need 0 < c <= 0.5, got {list(c_list)}")
    return sorted(c_list, reverse=True)


def two_time_tv(c: float, K: float, start: State, t1: float, t2: float) -> float:
    """TV between the joint laws at rescaled times (t1, t2) of the prelimit chain and the limit."""
    if not 0 < t1 < t2:
        raise ValidationError(f"Need 0 < t1 < t2, got ({t1}, {t2})")
    init = InitialBlocks(*start)
    Q = blockcounting_q(SeedbankParams(c=c, K=K), init)
    first = marginal(Q, start, t1 / c)
    prelimit = first[:, None] * expm_conservative(Q, (t2 - t1) / c).entries
    sg = ancient_lines_semigroup(init, K)
    limit_first = ancient_semigroup(sg, t1).row(start)
    limit = limit_first[:, None] * ancient_semigroup(sg, t2 - t1).entries
    return total_variation(prelimit.ravel(), limit.ravel())


def chain_convergence_tv(
    c_list: Sequence[float],
    K: float,
    start: State,
    t_list: Sequence[float],
    joint_times: Sequence[tuple[float, float]] = (),
    target: float = 0.05,
) -> ConvergenceReport:
    """Exact TV between the sped-up chain at t / c and the limit semigroup row, per (c, t)."""
    cs = _check_c_list(c_list)
    init = InitialBlocks(*start)
    sg = ancient_lines_semigroup(init, K)
    records = []
    monotone = {}
    for t in t_list:
        reference = ancient_semigroup(sg, t).row(start)
        tvs = []
        for c in cs:
            law = marginal(blockcounting_q(SeedbankParams(c=c, K=K), init), start, t / c)
            tv = total_variation(law, reference)
            tvs.append(tv)
            records.append(TvRecord(c=c, t=t, tv=tv))
            log.info("chain TV: c=%g t=%g tv=%.4e", c, t, tv)
        monotone[t] = _strictly_decreasing(tvs)
        if not monotone[t]:
            log.warning("TV is not strictly decreasing in c at t=%g: %s", t, tvs)
    joint = [
        JointTvRecord(c=c, t1=t1, t2=t2, tv=two_time_tv(c, K, start, t1, t2))
        for t1, t2 in joint_times
        for c in cs
    ]
    final = [r.tv for r in records if r.c == cs[-1]]
    target_met = all(tv < target for tv in final)
    if not target_met:
        log.warning("TV at c=%g is %s, above the %g target", cs[-1], final, target)
    return ConvergenceReport(start=start, records=tuple(records), joint_records=tuple(joint),
                             monotone=monotone, target_met=target_met)


def spark_statistic(
    c: float,
    K: float,
    horizon: float,
    replicates: int,
    master_seed: int,
    workers: int = 1,
) -> SparkRecord:
    """Time share in (2, 0) and (1,1) -> (2,0) -> (1,0) excursions on sped-up paths from (1, 1).

    horizon is in rescaled time, so each path runs for horizon / c model time.
    """
    if replicates < 1:
        raise ValidationError(f"replicates must be at least 1, got {replicates}")
    Q = blockcounting_q(SeedbankParams(c=c, K=K), InitialBlocks(1, 1))
    model_horizon = horizon / c

    def run(lo: int, hi: int) -> tuple[float, int]:
        occupied = 0.0
        excursions = 0
        for i in range(lo, hi):
            path = sample_path(Q, (1, 1), model_horizon, RngStream(master_seed, i))
            occupied += path.occupation_time(SPARK_STATE)
            visited = path.visited
            excursions += sum(
                1 for j in range(len(visited) - 2) if tuple(visited[j:j + 3]) == SPARK_EXCURSION
            )
        return occupied, excursions

    results = map_batches(run, replicate_batches(replicates, 1_000), workers)
    occupied = sum(r[0] for r in results)
    excursions = sum(r[1] for r in results)
    record = SparkRecord(
        c=c,
        replicates=replicates,
        occupation_fraction=occupied / (replicates * model_horizon),
        excursions_per_path=excursions / replicates,
    )
    log.info("sparks: c=%g occupation=%.4e excursions/path=%.3f",
             c, record.occupation_fraction, record.excursions_per_path)
    return record


def spark_trend_ok(records: Sequence[SparkRecord]) -> bool:
    """Occupation of (2, 0) falls as c falls while excursion counts stay within a factor 2."""
    ordered = sorted(records, key=lambda r: r.c, reverse=True)
    occupation = [r.occupation_fraction for r in ordered]
    counts = [r.excursions_per_path for r in ordered]
    if not counts or min(counts) <= 0:
        return False
    return _strictly_decreasing(occupation) and max(counts) <= 2 * min(counts)


def fixation_check(
    process: str,
    start: tuple[float, float],
    K: float,
    t_list: Sequence[float],
    replicates: int,
    master_seed: int,
    c: float = 1.0,
    h: float = DEFAULT_H,
    alpha_prime: float = 0.0,
    n_sigma: float = DEFAULT_N_SIGMA,
    bias_allowance: float | None = None,
    workers: int = 1,
) -> FixationReport:
    """(K X + Y) / (K + 1) is a martingale for every process here; check its mean stays put."""
    if replicates < MIN_REPLICATES:
        raise ValidationError(f"replicates must be at least {MIN_REPLICATES}, got {replicates}")
    x0, y0 = start
    expected = (K * x0 + y0) / (K + 1)
    if bias_allowance is None:
        bias_allowance = 0.0 if process == "limit" else DEFAULT_BIAS_ALLOWANCE
    sim = make_simulator(process, c=c, K=K, h=h, alpha_prime=alpha_prime, workers=workers)
    ensemble = sim(x0, y0, t_list, replicates, master_seed)
    records = []
    for t in t_list:
        xs, ys = ensemble.at(t)
        values = (K * xs + ys) / (K + 1)
        mean = float(values.mean())
        sigma = float(values.std(ddof=1) / math.sqrt(values.size))
        passed = abs(mean - expected) <= n_sigma * sigma + bias_allowance + ROUNDOFF
        records.append(FixationRecord(t=t, mean=mean, sigma=sigma, expected=expected, passed=passed))
        log.info("fixation (%s): t=%g mean=%.5f expected=%.5f sigma=%.2g", process, t, mean, expected, sigma)
    return FixationReport(process=process, records=tuple(records))
