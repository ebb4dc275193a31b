"""Finite-state Markov chain numerics: matrix exponentials, powers, norms, path sampling."""

import functools
import logging
import math
from collections.abc import Iterable

import numpy as np
from scipy.stats import poisson

from src.constants import TOLERANCES
from src.models.errors import NumericalError, ValidationError
from src.models.matrices import (
    GeneralMatrix,
    PathSample,
    RateMatrix,
    State,
    StateSpace,
    TransitionMatrix,
    conservative_violation,
    identity,
    state_label,
)
from src.utils.rng import RngStream

log = logging.getLogger(__name__)

# Scaling-and-squaring reduces t*M until its norm is at most this before the series runs.
SQUARING_THRESHOLD = 0.5
MAX_SERIES_TERMS = 40


def _entries(matrix: GeneralMatrix | np.ndarray) -> np.ndarray:
    return matrix.entries if isinstance(matrix, GeneralMatrix) else np.asarray(matrix, dtype=float)


def poisson_truncation(rate: float, tail: float = TOLERANCES.poisson_tail) -> int:
    """Smallest k with P(N > k) < tail for N ~ Poisson(rate)."""
    k = int(poisson.isf(tail, rate))
    while poisson.sf(k, rate) >= tail:
        k += 1
    return k


def expm_conservative(Q: RateMatrix | GeneralMatrix, t: float) -> TransitionMatrix:
    """e^{tQ} by uniformization.

    With q = max exit rate, e^{tQ} = sum_k Poisson(k; qt) U^k where U = I + Q/q is stochastic,
    so every partial sum is a sub-stochastic matrix.
    """
    if t < 0:
        raise ValidationError(f"Time must be non-negative, got {t}")
    entries = Q.entries
    bad = conservative_violation(entries)
    if bad is not None:
        raise ValidationError(
            f"expm_conservative needs a conservative Q-matrix; row {state_label(Q.space.state(bad))} "
            f"is {entries[bad].tolist()}"
        )
    size = len(Q.space)
    q = float(np.max(-np.diag(entries), initial=0.0))
    if q == 0.0 or t == 0.0:
        return identity(Q.space)

    rate = q * t
    k_max = poisson_truncation(rate)
    weights = poisson.pmf(np.arange(k_max + 1), rate)
    log.debug("Uniformization: q=%.4g t=%.4g terms=%d", q, t, k_max + 1)

    uniformized = np.eye(size) + entries / q
    term = np.eye(size)
    result = weights[0] * term
    for k in range(1, k_max + 1):
        term = term @ uniformized
        result += weights[k] * term
    # Rows sum to the retained Poisson mass; put the dropped tail back proportionally.
    result /= weights.sum()
    return TransitionMatrix(Q.space, result)


def expm_general(M: GeneralMatrix, t: float) -> GeneralMatrix:
    """e^{tM} for any finite matrix by scaling-and-squaring around a Taylor series."""
    scaled = t * M.entries
    size = len(M.space)
    norm = matrix_norm(scaled)
    squarings = max(0, math.ceil(math.log2(norm / SQUARING_THRESHOLD))) if norm > SQUARING_THRESHOLD else 0
    reduced = scaled / (2.0 ** squarings)

    result = np.eye(size)
    term = np.eye(size)
    for k in range(1, MAX_SERIES_TERMS + 1):
        term = term @ reduced / k
        result = result + term
        if matrix_norm(term) <= np.finfo(float).eps * matrix_norm(result):
            break
    log.debug("expm_general: norm=%.4g squarings=%d series_terms=%d", norm, squarings, k)

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(squarings):
            result = result @ result
            if not np.all(np.isfinite(result)):
                raise NumericalError(f"Overflow while squaring e^(tM) (t={t}, norm={norm:.3g})")
    return GeneralMatrix(M.space, result)


def matrix_power(A: GeneralMatrix, r: int) -> GeneralMatrix:
    if r < 0:
        raise ValidationError(f"Matrix power must be non-negative, got {r}")
    base = A.entries.copy()
    result = np.eye(len(A.space))
    with np.errstate(over="ignore", invalid="ignore"):
        while r:
            if r & 1:
                result = result @ base
            r >>= 1
            if r:
                base = base @ base
            if not (np.all(np.isfinite(result)) and np.all(np.isfinite(base))):
                raise NumericalError("Overflow while computing matrix power")
    return GeneralMatrix(A.space, result)


def matrix_norm(A: GeneralMatrix | np.ndarray) -> float:
    """Maximum absolute row sum."""
    entries = _entries(A)
    if entries.size == 0:
        return 0.0
    return float(np.max(np.abs(entries).sum(axis=1)))


def _as_probabilities(p, space: StateSpace | None) -> np.ndarray:
    probs = np.asarray(p, dtype=float)
    if probs.ndim != 1:
        raise ValidationError("A probability row must be one-dimensional")
    if abs(probs.sum() - 1.0) > TOLERANCES.distribution_sum:
        raise ValidationError(f"Probability row sums to {probs.sum():.10f}, not 1")
    if space is not None and len(space) != probs.size:
        raise ValidationError("Probability row length does not match its state space")
    return probs


def total_variation(
    p, q, space_p: StateSpace | None = None, space_q: StateSpace | None = None
) -> float:
    """(1/2) sum |p_i - q_i| for rows over the same state space."""
    if space_p is not None and space_q is not None and space_p != space_q:
        raise ValidationError("Probability rows live on different state spaces")
    p_arr = _as_probabilities(p, space_p)
    q_arr = _as_probabilities(q, space_q)
    if p_arr.size != q_arr.size:
        raise ValidationError(f"Probability rows have different lengths ({p_arr.size} vs {q_arr.size})")
    return float(min(1.0, 0.5 * np.abs(p_arr - q_arr).sum()))


def marginal(Q: RateMatrix, start: State, t: float) -> np.ndarray:
    """Law at time t of the chain generated by Q started in start."""
    return expm_conservative(Q, t).row(start)


def empirical_distribution(states: Iterable[State], space: StateSpace) -> np.ndarray:
    counts = np.zeros(len(space))
    for state in states:
        counts[space.index(state)] += 1
    total = counts.sum()
    if total == 0:
        raise ValidationError("No samples to build an empirical distribution from")
    return counts / total


@functools.lru_cache(maxsize=64)
def _jump_tables(Q: RateMatrix) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    entries = Q.entries
    exit_rates = -np.diag(entries).copy()
    targets: list[np.ndarray] = []
    cumulative: list[np.ndarray] = []
    for i in range(len(Q.space)):
        row = entries[i].copy()
        row[i] = 0.0
        idx = np.flatnonzero(row > 0)
        targets.append(idx)
        cum = np.cumsum(row[idx])
        cumulative.append(cum / cum[-1] if cum.size else cum)
    return exit_rates, targets, cumulative


def sample_path(Q: RateMatrix, start: State, horizon: float, rng: RngStream) -> PathSample:
    """Exact jump-path sample (Gillespie) on [0, horizon]; zero rows absorb."""
    if horizon < 0:
        raise ValidationError(f"Horizon must be non-negative, got {horizon}")
    space = Q.space
    current = space.index(start)
    exit_rates, targets, cumulative = _jump_tables(Q)
    gen = rng.generator()

    t = 0.0
    jump_times: list[float] = []
    visited: list[State] = [start]
    while True:
        rate = exit_rates[current]
        if rate <= 0.0:
            break
        t += gen.standard_exponential() / rate
        if t > horizon:
            break
        pick = int(np.searchsorted(cumulative[current], gen.random(), side="right"))
        current = int(targets[current][min(pick, targets[current].size - 1)])
        jump_times.append(t)
        visited.append(space.state(current))
    return PathSample(tuple(jump_times), tuple(visited), horizon)
