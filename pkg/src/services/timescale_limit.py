"""Separation-of-time-scales pipeline for finite-state chain families indexed by a scale c.

For each c the chain is watched on the grid 1/a_c, giving the one-step matrix
Π_c = e^{Q_c / a_c} = A_c + B_c / b_c. Long runs of A_c collapse onto a projection P, the
slow part converges to G = lim P B_c P, and the sped-up discrete chains converge to P e^{tG}.
Every step is certified by trends over a finite list of c values, never by assuming a limit.
"""

import logging
import math
from collections.abc import Callable, Mapping, Sequence

import numpy as np

from src.constants import TOLERANCES
from src.models.errors import LimitNotSupportedError, NumericalError, ValidationError
from src.models.matrices import GeneralMatrix, RateMatrix, State, TransitionMatrix, identity
from src.models.params import InitialBlocks, ScalingSequence, SeedbankParams
from src.models.reports import (
    DiscretizationRecord,
    DiscretizationReport,
    LimitResult,
    ProjectionResidual,
    StepConditionReport,
    StepRecord,
    TimescaleReport,
)
from src.services.markov_core import (
    expm_conservative,
    expm_general,
    marginal,
    matrix_norm,
    matrix_power,
    total_variation,
)
from src.services.seedbank_models import (
    blockcounting_q,
    prelimit_decomposition,
    step_rate_bound,
    structured_q,
)

log = logging.getLogger(__name__)

QFamily = Callable[[float], RateMatrix]
Decomposition = Callable[[float], tuple[TransitionMatrix, GeneralMatrix]]

STEP_RATIO_TARGET = 0.1
# Slack for trend comparisons of quantities that reach round-off level.
TREND_SLACK = 1e-12


def exit_rate(Q: GeneralMatrix) -> float:
    """q = max_e (-Q[e, e])."""
    return float(np.max(-np.diag(Q.entries), initial=0.0))


def check_step_condition(
    q_family: QFamily,
    scaling: ScalingSequence,
    rate_bound: Callable[[float], float] | None = None,
) -> StepConditionReport:
    """Check that a_c grows faster than the largest exit rate q_c along the scaling sequence.

    The verdict needs q_c / a_c strictly decreasing and below 0.1 at the last c.
    """
    records = []
    for c in scaling.c_values:
        q = exit_rate(q_family(c))
        a = scaling.a(c)
        records.append(StepRecord(c=c, a=a, q=q, ratio=q / a,
                                  rate_bound=rate_bound(c) if rate_bound else None))
    ratios = [r.ratio for r in records]
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    verdict = decreasing and ratios[-1] < STEP_RATIO_TARGET
    for r in records:
        log.info("step condition: c=%g q=%.6g q/a=%.3e", r.c, r.q, r.ratio)
        if r.rate_bound is not None and r.q > r.rate_bound + TOLERANCES.build:
            log.warning("q=%.6g exceeds the supplied rate bound %.6g at c=%g", r.q, r.rate_bound, r.c)
    if not verdict:
        log.warning("Step condition not supported: ratios %s", ["%.3e" % x for x in ratios])
    return StepConditionReport(records=tuple(records), verdict=verdict)


def _rounded_limit(power: np.ndarray) -> tuple[np.ndarray, float]:
    rounded = np.rint(power)
    return rounded, float(np.max(np.abs(power - rounded), initial=0.0))


def detect_projection(
    A_kappa: GeneralMatrix,
    a_kappa: float,
    C_grid: Sequence[float],
    n0: int | None = None,
) -> tuple[GeneralMatrix, list[ProjectionResidual]]:
    """Round A^R, R = ceil(max(C) a), to a 0/1 projection and record ||A^{ceil(C a)} - P|| per C.

    With n0 given, each residual carries the bound (n0 - 1) / C on the probability that
    the fast coalescence has not finished after C a steps.
    """
    if not C_grid:
        raise ValidationError("C_grid must not be empty")
    if a_kappa <= 0:
        raise ValidationError(f"a_kappa must be positive, got {a_kappa}")
    A = A_kappa if isinstance(A_kappa, TransitionMatrix) else TransitionMatrix(A_kappa.space, A_kappa.entries)
    grid = sorted(C_grid)
    top = math.ceil(grid[-1] * a_kappa)
    P_entries, error = _rounded_limit(matrix_power(A, top).entries)
    log.debug("detect_projection: a=%g R=%d rounding error %.3e", a_kappa, top, error)
    if error > TOLERANCES.rounding:
        raise LimitNotSupportedError(
            f"A^{top} is {error:.3g} away from a 0/1 matrix; no clean projection at a={a_kappa}"
        )
    if not np.array_equal(P_entries @ P_entries, P_entries):
        raise LimitNotSupportedError("Rounded limit of A^r is not idempotent")
    P_hat = GeneralMatrix(A.space, P_entries)

    residuals = []
    for C in grid:
        steps = math.ceil(C * a_kappa)
        diff = matrix_power(A, steps).entries - P_entries
        residuals.append(ProjectionResidual(
            C=C,
            steps=steps,
            residual=matrix_norm(diff),
            entry_error=float(np.max(np.abs(diff), initial=0.0)),
            absorption_bound=(n0 - 1) / C if n0 is not None else None,
        ))
    return P_hat, residuals


def pbp_family(P_hat: GeneralMatrix, B_kappa_family: Mapping[float, GeneralMatrix]) -> list[tuple[float, np.ndarray]]:
    """(c, P B_c P) ordered by decreasing c."""
    p = P_hat.entries
    return [(c, p @ B_kappa_family[c].entries @ p) for c in sorted(B_kappa_family, reverse=True)]


def cauchy_gaps(reduced: list[tuple[float, np.ndarray]]) -> list[float]:
    return [matrix_norm(later - earlier) for (_, earlier), (_, later) in zip(reduced, reduced[1:])]


def _non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a + TREND_SLACK * max(1.0, a) for a, b in zip(values, values[1:]))


def extract_g(
    P_hat: GeneralMatrix, B_kappa_family: Mapping[float, GeneralMatrix]
) -> tuple[GeneralMatrix, list[tuple[float, float]]]:
    """G_hat = P B_c P at the smallest c, with ||P B_c P - G_hat|| per c.

    Raises LimitNotSupportedError when either the residuals or the gaps between
    consecutive c grow.
    """
    if not B_kappa_family:
        raise ValidationError("B_kappa family must not be empty")
    p = P_hat.entries
    if not np.array_equal(p @ p, p):
        raise ValidationError("P_hat is not idempotent")
    reduced = pbp_family(P_hat, B_kappa_family)
    G_entries = reduced[-1][1]
    residuals = [(c, matrix_norm(m - G_entries)) for c, m in reduced]
    gaps = cauchy_gaps(reduced)
    for c, r in residuals:
        log.debug("P B P residual at c=%g: %.3e", c, r)
    if not _non_increasing([r for _, r in residuals]) or not _non_increasing(gaps):
        raise LimitNotSupportedError(
            f"P B_c P does not settle as c decreases (residuals {[f'{r:.3g}' for _, r in residuals]}, "
            f"gaps {[f'{g:.3g}' for g in gaps]}); limit existence not supported"
        )
    return GeneralMatrix(P_hat.space, G_entries), residuals


def assemble_limit(P_hat: GeneralMatrix, G_hat: GeneralMatrix, t: float) -> TransitionMatrix:
    """Π(t) = P e^{tG}, with Π(0) = I."""
    if t < 0:
        raise ValidationError(f"Time must be non-negative, got {t}")
    p, g = P_hat.entries, G_hat.entries
    tol = TOLERANCES.algebraic * max(1.0, matrix_norm(g))
    if matrix_norm(p @ g - g) > tol or matrix_norm(g @ p - g) > tol:
        raise LimitNotSupportedError("P_hat and G_hat do not satisfy PG = GP = G")
    if t == 0:
        return identity(P_hat.space)
    return TransitionMatrix(P_hat.space, p @ expm_general(G_hat, t).entries)


def discrete_steps(b: float, t: float) -> int:
    """floor(b t), robust to b t landing a hair below an integer."""
    return math.floor(b * t + 1e-9)


def verify_discretization_lemma(
    q_family: QFamily,
    scaling: ScalingSequence,
    t_grid: Sequence[float],
    start: State,
) -> DiscretizationReport:
    """Compare the chain at time b t / a with floor(b t) steps of its 1/a-skeleton.

    The two laws differ by at most the probability 1 - e^{-q/a} of a jump in one grid cell.
    """
    records = []
    for c in scaling.c_values:
        Q = q_family(c)
        a, b = scaling.a(c), scaling.b(c)
        bound = -math.expm1(-exit_rate(Q) / a)
        skeleton = expm_conservative(Q, 1.0 / a)
        for t in t_grid:
            steps = discrete_steps(b, t)
            try:
                stepped = TransitionMatrix(Q.space, matrix_power(skeleton, steps).entries)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at c={c}, {steps} steps; shrink the time grid") from exc
            continuous = marginal(Q, start, b * t / a)
            tv = total_variation(continuous, stepped.row(start))
            records.append(DiscretizationRecord(c=c, t=t, steps=steps, tv=tv, bound=bound))
            log.info("discretization: c=%g t=%g steps=%d tv=%.3e bound=%.3e", c, t, steps, tv, bound)
    report = DiscretizationReport(tuple(records))
    if not report.passed:
        log.warning("Discretization TV exceeds the jump-probability bound")
    return report


def run_pipeline(
    q_family: QFamily,
    decompose: Decomposition,
    scaling: ScalingSequence,
    C_grid: Sequence[float],
    t_grid: Sequence[float],
    start: State,
    rate_bound: Callable[[float], float] | None = None,
) -> TimescaleReport:
    """Run every stage for one family: step condition, projection, G, limit semigroup, discretization."""
    step = check_step_condition(q_family, scaling, rate_bound)
    decompositions = {c: decompose(c) for c in scaling.c_values}
    c_min = scaling.c_values[-1]
    A_min = decompositions[c_min][0]
    P_hat, projection = detect_projection(A_min, scaling.a(c_min), C_grid, n0=start[0])
    for r in projection:
        log.info("projection: C=%g residual=%.3e bound=%s", r.C, r.residual, r.absorption_bound)
    B_family = {c: B for c, (_, B) in decompositions.items()}
    G_hat, pbp = extract_g(P_hat, B_family)
    limit = LimitResult(
        P_hat=P_hat,
        G_hat=G_hat,
        projection_residuals=tuple(projection),
        pbp_residuals=tuple(pbp),
        rounding_error=projection[-1].entry_error,
        cauchy_gaps=tuple(cauchy_gaps(pbp_family(P_hat, B_family))),
    )
    semigroup = {t: assemble_limit(P_hat, G_hat, t) for t in t_grid}
    discretization = verify_discretization_lemma(q_family, scaling, t_grid, start)
    return TimescaleReport(step_condition=step, limit=limit, discretization=discretization, semigroup=semigroup)


def seedbank_family(init: InitialBlocks, K: float, structured: bool = False) -> tuple[QFamily, Decomposition, Callable[[float], float]]:
    """Q_c, the A_c / B_c split and the exit-rate bound for the seed bank chain.

    With structured=True the second island coalesces at rate α' = c.
    """
    def params(c: float) -> SeedbankParams:
        return SeedbankParams(c=c, K=K, alpha_prime=c if structured else None)

    def q_family(c: float) -> RateMatrix:
        return structured_q(params(c), init) if structured else blockcounting_q(params(c), init)

    def decompose(c: float) -> tuple[TransitionMatrix, GeneralMatrix]:
        return prelimit_decomposition(c, K, init, alpha_prime=c if structured else None)

    def bound(c: float) -> float:
        extra = c * init.total * (init.total - 1) / 2 if structured else 0.0
        return step_rate_bound(params(c), init) + extra

    return q_family, decompose, bound
