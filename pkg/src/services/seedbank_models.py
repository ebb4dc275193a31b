"""Rate matrices and degenerate semigroups of the seed bank coalescent and its scaling limits.

States are (n, m): n active and m dormant ancestral lineages. The prelimit chains move by
coalescence of active lines, dormancy (n-1, m+1) and resuscitation (n+1, m-1). In the limit
active lines coalesce instantly, which the projection P encodes.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.constants import TOLERANCES
from src.models.errors import NumericalError, ValidationError
from src.models.matrices import (
    GeneralMatrix,
    RateMatrix,
    State,
    StateSpace,
    TransitionMatrix,
    identity,
    state_label,
)
from src.models.params import InitialBlocks, SeedbankParams
from src.services.markov_core import expm_conservative, expm_general, matrix_norm

log = logging.getLogger(__name__)

RATE_KINDS = ("coalescence", "dormancy", "resuscitation", "island_coalescence")


def pairs(k: int) -> int:
    """binom(k, 2), zero for k <= 1."""
    return k * (k - 1) // 2 if k > 1 else 0


def _fill(space: StateSpace, entries: np.ndarray, src: State, dst: State, rate: float) -> None:
    if rate == 0.0:
        return
    if dst not in space:
        raise ValidationError(f"Transition {state_label(src)} -> {state_label(dst)} leaves the state space")
    entries[space.index(src), space.index(dst)] += rate


def _set_diagonal_from_rows(entries: np.ndarray) -> np.ndarray:
    np.fill_diagonal(entries, 0.0)
    np.fill_diagonal(entries, -entries.sum(axis=1))
    return entries


def _blockcounting_entries(
    params: SeedbankParams, space: StateSpace, island_rate: float, rate_factors: dict[str, float]
) -> np.ndarray:
    unknown = set(rate_factors) - set(RATE_KINDS)
    if unknown:
        raise ValidationError(f"Unknown rate kinds {sorted(unknown)}; expected {RATE_KINDS}")
    factor = {kind: rate_factors.get(kind, 1.0) for kind in RATE_KINDS}
    c, K = params.c, params.K
    entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        src = (n, m)
        _fill(space, entries, src, (n - 1, m), factor["coalescence"] * pairs(n))
        if n >= 1:
            _fill(space, entries, src, (n - 1, m + 1), factor["dormancy"] * c * n)
        if m >= 1:
            _fill(space, entries, src, (n + 1, m - 1), factor["resuscitation"] * c * K * m)
        _fill(space, entries, src, (n, m - 1), factor["island_coalescence"] * island_rate * pairs(m))
    return _set_diagonal_from_rows(entries)


def blockcounting_q(
    params: SeedbankParams, init: InitialBlocks, rate_factors: dict[str, float] | None = None
) -> RateMatrix:
    """Q-matrix of the seed bank coalescent block-counting process on E_(n0, m0).

    rate_factors multiplies one kind of transition, e.g. {"dormancy": 1.2}.
    """
    if params.alpha_prime is not None:
        log.debug("blockcounting_q ignores alpha_prime=%s; use structured_q", params.alpha_prime)
    space = StateSpace.seedbank(init.n0, init.m0)
    entries = _blockcounting_entries(params, space, 0.0, rate_factors or {})
    return RateMatrix(space, entries)


def structured_q(
    params: SeedbankParams, init: InitialBlocks, rate_factors: dict[str, float] | None = None
) -> RateMatrix:
    """Block-counting Q of the two-island structured coalescent (coalescence α' in island two)."""
    if params.alpha_prime is None:
        raise ValidationError("structured_q needs alpha_prime")
    space = StateSpace.seedbank(init.n0, init.m0)
    entries = _blockcounting_entries(params, space, params.alpha_prime, rate_factors or {})
    return RateMatrix(space, entries)


def step_rate_bound(params: SeedbankParams, init: InitialBlocks) -> float:
    """Upper bound on the largest exit rate of blockcounting_q over E_(n0, m0)."""
    total = init.total
    return pairs(total) + params.c * total + params.c * params.K * total


def _collapse(state: State) -> State:
    n, m = state
    return (min(n, 1), m)


def projection_matrix(space: StateSpace) -> GeneralMatrix:
    entries = np.zeros((len(space), len(space)))
    for i, state in enumerate(space.states):
        entries[i, space.index(_collapse(state))] = 1.0
    return GeneralMatrix(space, entries)


def projection_p(init: InitialBlocks) -> GeneralMatrix:
    """P: every active line but one coalesces instantly, (n, m) -> (min(n, 1), m)."""
    return projection_matrix(StateSpace.seedbank(init.n0, init.m0))


def ancient_g(init: InitialBlocks, K: float) -> GeneralMatrix:
    """The five-case matrix G of the ancient ancestral lines process, entry for entry.

    Rows with n >= 2 carry n at (0, m+1); they never influence P e^{tG}.
    """
    if K <= 0:
        raise ValidationError(f"K must be positive, got {K}")
    space = StateSpace.seedbank(init.n0, init.m0)
    entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        src = (n, m)
        if m >= 1:
            _fill(space, entries, src, (1, m - 1), K * m)
        if n >= 1:
            _fill(space, entries, src, (0, m + 1), float(n))
            _fill(space, entries, src, (1, m), -float(n) - K * m)
        else:
            _fill(space, entries, src, (0, m), -K * m)
    return GeneralMatrix(space, entries)


def imbalanced_ghat(init: InitialBlocks, K: float) -> GeneralMatrix:
    """The limit matrix Ĝ of the two-island chain with coalescence scaled like c in island two."""
    if K <= 0:
        raise ValidationError(f"K must be positive, got {K}")
    space = StateSpace.seedbank(init.n0, init.m0)
    entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        src = (n, m)
        if n >= 1:
            if m >= 1:
                _fill(space, entries, src, (1, m - 1), K * m + pairs(m))
            _fill(space, entries, src, (0, m + 1), float(n))
            _fill(space, entries, src, (1, m), -pairs(m) - n - K * m)
        else:
            if m >= 1:
                _fill(space, entries, src, (1, m - 1), K * m)
                _fill(space, entries, src, (0, m - 1), float(pairs(m)))
            _fill(space, entries, src, (0, m), -pairs(m) - K * m)
    return GeneralMatrix(space, entries)


def limit_b(init: InitialBlocks, K: float) -> GeneralMatrix:
    """B = lim B_κ: migration at rate 1 per line (dormancy n, resuscitation Km)."""
    if K <= 0:
        raise ValidationError(f"K must be positive, got {K}")
    space = StateSpace.seedbank(init.n0, init.m0)
    entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        src = (n, m)
        if n >= 1:
            _fill(space, entries, src, (n - 1, m + 1), float(n))
        if m >= 1:
            _fill(space, entries, src, (n + 1, m - 1), K * m)
    return GeneralMatrix(space, _set_diagonal_from_rows(entries))


def limit_b_structured(init: InitialBlocks, K: float) -> GeneralMatrix:
    """lim B_κ for the two-island chain with α' = c: B plus binom(m, 2) coalescence in island two."""
    base = limit_b(init, K).entries.copy()
    space = StateSpace.seedbank(init.n0, init.m0)
    for n, m in space.states:
        _fill(space, base, (n, m), (n, m - 1), float(pairs(m)))
    return GeneralMatrix(space, _set_diagonal_from_rows(base))


def prelimit_decomposition(
    c_kappa: float, K: float, init: InitialBlocks, alpha_prime: float | None = None
) -> tuple[TransitionMatrix, GeneralMatrix]:
    """Split the one-step matrix Π_κ = e^{c² Q} into A_κ + B_κ / b_κ with b_κ = c^-3.

    A_κ holds the fast coalescence (binom(n,2) c² per step); B_κ := b_κ (Π_κ - A_κ) is
    taken from the exact Π_κ so the identity holds by construction.
    """
    if not 0 < c_kappa <= 1:
        raise ValidationError(f"c_kappa must lie in (0, 1], got {c_kappa}")
    params = SeedbankParams(c=c_kappa, K=K, alpha_prime=alpha_prime)
    Q = structured_q(params, init) if alpha_prime is not None else blockcounting_q(params, init)
    space = Q.space
    step = c_kappa ** 2
    b_kappa = c_kappa ** -3

    a_entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        p = pairs(n) * step
        if p > 1.0:
            raise ValidationError(
                f"c_kappa={c_kappa} too large: coalescence probability {p:.3g} in state {state_label((n, m))}"
            )
        i = space.index((n, m))
        a_entries[i, i] = 1.0 - p
        if p > 0:
            a_entries[i, space.index((n - 1, m))] = p
    A = TransitionMatrix(space, a_entries)

    pi_kappa = expm_conservative(Q, step)
    B = GeneralMatrix(space, b_kappa * (pi_kappa.entries - A.entries))
    return A, B


@dataclass(frozen=True, eq=False)
class DegenerateSemigroup:
    """Π(t) = P e^{tG} for t > 0 and Π(0) = I."""

    space: StateSpace
    P: GeneralMatrix
    G: GeneralMatrix

    def __post_init__(self) -> None:
        p = self.P.entries
        if not np.all((p == 0.0) | (p == 1.0)) or not np.all(p.sum(axis=1) == 1.0):
            raise ValidationError("P must have exactly one entry equal to 1 in each row")
        if not np.array_equal(p @ p, p):
            raise ValidationError("P is not idempotent")
        g = self.G.entries
        tol = TOLERANCES.build * max(1.0, matrix_norm(g))
        if matrix_norm(p @ g - g) > tol or matrix_norm(g @ p - g) > tol:
            raise ValidationError("G does not commute with P as PG = GP = G")

    @property
    def image(self) -> StateSpace:
        """States kept by P (not vacated instantly)."""
        p = self.P.entries
        return StateSpace(tuple(s for i, s in enumerate(self.space.states) if p[i, i] == 1.0))


def reduce_generator(P: GeneralMatrix, G: GeneralMatrix) -> GeneralMatrix:
    """P·G: rows of G outside the image of P replaced by the row of their projection."""
    return GeneralMatrix(G.space, P.entries @ G.entries)


def ancient_lines_semigroup(init: InitialBlocks, K: float) -> DegenerateSemigroup:
    P = projection_p(init)
    return DegenerateSemigroup(P.space, P, reduce_generator(P, ancient_g(init, K)))


def imbalanced_semigroup(init: InitialBlocks, K: float) -> DegenerateSemigroup:
    P = projection_p(init)
    return DegenerateSemigroup(P.space, P, reduce_generator(P, imbalanced_ghat(init, K)))


def _image_block(sg: DegenerateSemigroup) -> tuple[StateSpace, np.ndarray, np.ndarray]:
    image = sg.image
    idx = np.array([sg.space.index(s) for s in image.states])
    return image, idx, sg.G.entries[np.ix_(idx, idx)]


def ancient_semigroup(sg: DegenerateSemigroup, t: float, validate: bool = False) -> TransitionMatrix:
    """Evaluate Π(t) = P e^{tG}.

    G maps into the image of P, where it is a conservative Q-matrix, so e^{tG} is taken by
    uniformization on that block and P selects the row of the collapsed start state.
    With validate=True the result is cross-checked against P·expm_general(G, t).
    """
    if t < 0:
        raise ValidationError(f"Time must be non-negative, got {t}")
    if t == 0:
        return identity(sg.space)

    image, idx, block = _image_block(sg)
    sub = expm_conservative(RateMatrix(image, block), t).entries
    size = len(sg.space)
    embedded = np.zeros((size, size))
    embedded[np.ix_(idx, idx)] = sub
    result = sg.P.entries @ embedded

    if validate:
        reference = sg.P.entries @ expm_general(sg.G, t).entries
        gap = float(np.max(np.abs(result - reference)))
        log.debug("ancient_semigroup cross-check at t=%g: max gap %.2e", t, gap)
        if gap > TOLERANCES.algebraic:
            raise NumericalError(f"Semigroup evaluations disagree by {gap:.3e} at t={t}")
    return TransitionMatrix(sg.space, result)


def restricted_gbar(K: float, m_max: int) -> RateMatrix:
    """Ḡ on {0,1} x {0..m_max}: resuscitation with instant coalescence, and dormancy of the active line.

    Dormancy out of (1, m_max) would leave the truncated space. That rate is dropped together
    with its share of the diagonal, so the row stays conservative and keeps the mass instead of
    leaking it; the state is recorded in truncated_states. With m_max >= n0 + m0 the state is
    unreachable from (n0, m0), so the truncation is exact.
    """
    if K <= 0:
        raise ValidationError(f"K must be positive, got {K}")
    if m_max < 1:
        raise ValidationError(f"m_max must be at least 1, got {m_max}")
    space = StateSpace.reduced(m_max)
    entries = np.zeros((len(space), len(space)))
    for n, m in space.states:
        src = (n, m)
        if m >= 1:
            _fill(space, entries, src, (1, m - 1), K * m)
        if n == 1 and m < m_max:
            _fill(space, entries, src, (0, m + 1), 1.0)
    truncated = ((1, m_max),)
    log.debug("restricted_gbar: dormancy out of %s suppressed by truncation at m_max=%d",
              state_label(truncated[0]), m_max)
    return RateMatrix(space, _set_diagonal_from_rows(entries), truncated_states=truncated)
