"""Simulation of the seed bank and two-island diffusions and of their jump-process limits.

Prelimit diffusions (x active, y dormant allele frequency):

    dX = c (Y - X) dt + sqrt(X (1 - X)) dB
    dY = K c (X - Y) dt [+ α' sqrt(Y (1 - Y)) dB'   two-island model]

are stepped by Euler-Maruyama with clamping to [0, 1]. The limit process keeps x in {0, 1},
lets y relax toward x, and flips x at rate y (from 0) or 1 - y (from 1).
"""

import logging
import math
from collections.abc import Sequence

import numpy as np

from src.constants import DEFAULT_STEP_BUDGET
from src.models.diffusion import DiffusionState, EmConfig, Ensemble, HybridPath, JumpPath, JumpState
from src.models.errors import ValidationError
from src.utils.parallel import map_batches, replicate_batches
from src.utils.rng import RngStream

log = logging.getLogger(__name__)

# Normals are drawn per replicate in chunks of this many steps, so a replicate's draws
# never depend on how replicates are batched.
STEP_CHUNK = 1024
BATCH_ELEMENTS = 4_000_000
SCHEMES = {"seedbank": "em-seedbank", "two-island": "em-two-island"}
EXACT_SCHEME = "exact-jump"
HYBRID_SCHEME = "hybrid-thinning"

_noise_note_logged = False


def _note_two_island_noise() -> None:
    global _noise_note_logged
    if not _noise_note_logged:
        log.warning(
            "Two-island noise uses sqrt(y(1-y)) on the dormant island; the published formula "
            "writes sqrt(x(1-x)), which is treated as a typo"
        )
        _noise_note_logged = True


def _clamp(values: np.ndarray) -> tuple[np.ndarray, int]:
    outside = int(np.count_nonzero((values < 0.0) | (values > 1.0)))
    return np.clip(values, 0.0, 1.0), outside


def _em_arrays(
    x: np.ndarray,
    y: np.ndarray,
    c: float,
    K: float,
    h: float,
    z1: np.ndarray,
    z2: np.ndarray | None = None,
    alpha_prime: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, int]:
    sqrt_h = math.sqrt(h)
    x_new = x + c * (y - x) * h + np.sqrt(np.maximum(0.0, x * (1.0 - x))) * sqrt_h * z1
    y_new = y + K * c * (x - y) * h
    if z2 is not None and alpha_prime != 0.0:
        y_new = y_new + alpha_prime * np.sqrt(np.maximum(0.0, y * (1.0 - y))) * sqrt_h * z2
    x_new, clamped_x = _clamp(x_new)
    y_new, clamped_y = _clamp(y_new)
    return x_new, y_new, clamped_x + clamped_y


def em_step_seedbank(s: DiffusionState, c: float, K: float, h: float, z: float) -> DiffusionState:
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    x, y, _ = _em_arrays(np.array([s.x]), np.array([s.y]), c, K, h, np.array([z]))
    return DiffusionState(float(x[0]), float(y[0]))


def em_step_two_island(
    s: DiffusionState, c: float, K: float, alpha_prime: float, h: float, z1: float, z2: float
) -> DiffusionState:
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    x, y, _ = _em_arrays(
        np.array([s.x]), np.array([s.y]), c, K, h, np.array([z1]), np.array([z2]), alpha_prime
    )
    return DiffusionState(float(x[0]), float(y[0]))


def _record_steps(times: Sequence[float], h: float) -> np.ndarray:
    return np.array([int(round(t / h)) for t in times], dtype=np.int64)


def _check_budget(steps: int, budget: int, hint: str) -> None:
    if steps > budget:
        raise ValidationError(f"{steps} Euler-Maruyama steps per path exceed the budget of {budget}; {hint}")


def simulate_ensemble(
    model: str,
    c: float,
    K: float,
    start: DiffusionState,
    times: Sequence[float],
    h: float,
    replicates: int,
    master_seed: int,
    alpha_prime: float = 0.0,
    first_replicate: int = 0,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Ensemble:
    """Euler-Maruyama ensemble on model time, recording every replicate at the given times.

    Replicate j uses RngStream(master_seed, first_replicate + j); results do not depend on
    the worker count.
    """
    if model not in SCHEMES:
        raise ValidationError(f"Unknown model {model!r}; expected one of {sorted(SCHEMES)}")
    if replicates < 1:
        raise ValidationError(f"replicates must be at least 1, got {replicates}")
    grid = EmConfig(h=h, horizon=max(times), output_grid=tuple(times), step_budget=step_budget)
    record = _record_steps(grid.output_grid, h)
    total_steps = int(record[-1])
    _check_budget(total_steps, step_budget, "increase h or shorten the horizon")
    two_island = model == "two-island"
    if two_island:
        _note_two_island_noise()
    width = 2 if two_island else 1
    batch_size = max(1, BATCH_ELEMENTS // (min(max(total_steps, 1), STEP_CHUNK) * width))

    def run(lo: int, hi: int) -> tuple[np.ndarray, np.ndarray, int]:
        gens = [RngStream(master_seed, first_replicate + i).generator() for i in range(lo, hi)]
        x = np.full(hi - lo, start.x)
        y = np.full(hi - lo, start.y)
        out_x = np.empty((hi - lo, record.size))
        out_y = np.empty((hi - lo, record.size))
        clamps = 0
        slot = 0
        while slot < record.size and record[slot] == 0:
            out_x[:, slot], out_y[:, slot] = x, y
            slot += 1
        step = 0
        while step < total_steps:
            chunk = min(STEP_CHUNK, total_steps - step)
            draws = np.stack([g.standard_normal((chunk, width)) for g in gens])
            for j in range(chunk):
                z2 = draws[:, j, 1] if two_island else None
                x, y, clamped = _em_arrays(x, y, c, K, h, draws[:, j, 0], z2, alpha_prime)
                clamps += clamped
                step += 1
                while slot < record.size and record[slot] == step:
                    out_x[:, slot], out_y[:, slot] = x, y
                    slot += 1
        return out_x, out_y, clamps

    batches = replicate_batches(replicates, batch_size)
    log.debug("EM ensemble: model=%s steps=%d replicates=%d batches=%d",
              model, total_steps, replicates, len(batches))
    results = map_batches(run, batches, workers)
    clamp_events = sum(r[2] for r in results)
    ensemble = Ensemble(
        times=np.array(grid.output_grid),
        x=np.vstack([r[0] for r in results]),
        y=np.vstack([r[1] for r in results]),
        scheme=SCHEMES[model],
        clamp_events=clamp_events,
        steps=total_steps,
    )
    if clamp_events:
        log.debug("EM ensemble clamped %d coordinates (%.3e per replicate step)",
                  clamp_events, ensemble.clamp_frequency)
    return ensemble


def simulate_rescaled_ensemble(
    c: float,
    K: float,
    start: DiffusionState,
    grid: Sequence[float],
    h: float,
    replicates: int,
    master_seed: int,
    first_replicate: int = 0,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Ensemble:
    """Seed bank ensemble on the sped-up clock: reported at times t, simulated to model times t / c."""
    if not c > 0:
        raise ValidationError(f"c must be positive, got {c}")
    grid = sorted(set(grid))
    _check_budget(int(round(grid[-1] / (c * h))), step_budget, "coarsen h or raise c")
    ensemble = simulate_ensemble(
        "seedbank", c, K, start, [t / c for t in grid], h, replicates, master_seed,
        first_replicate=first_replicate, workers=workers, step_budget=step_budget,
    )
    return Ensemble(np.array(grid), ensemble.x, ensemble.y, ensemble.scheme,
                    ensemble.clamp_events, ensemble.steps)


def simulate_rescaled(
    c: float,
    K: float,
    start: DiffusionState,
    T: float,
    h: float,
    rng: RngStream,
    grid: Sequence[float] | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> list[tuple[float, DiffusionState]]:
    """One seed bank trajectory observed at rescaled times t, i.e. at model times t / c."""
    grid = tuple(grid) if grid is not None else (0.0, T)
    if any(t < 0 or t > T for t in grid):
        raise ValidationError(f"Output grid must lie inside [0, {T}]")
    ensemble = simulate_rescaled_ensemble(
        c, K, start, grid, h, 1, rng.master_seed,
        first_replicate=rng.replicate_index, step_budget=step_budget,
    )
    return [
        (float(t), DiffusionState(float(ensemble.x[0, j]), float(ensemble.y[0, j])))
        for j, t in enumerate(ensemble.times)
    ]


def _flow(x: int, y0: float, K: float, elapsed: float) -> float:
    return x + (y0 - x) * math.exp(-K * elapsed)


def sample_limit_jump(start: JumpState, K: float, horizon: float, rng: RngStream) -> JumpPath:
    """Exact path of the limit jump process by inverting the integrated jump hazard.

    On a segment started at y0 with indicator x, the hazard integrates to
    |y0 - x| (1 - e^{-K s}) / K, which stays below |y0 - x| / K forever.
    """
    if not isinstance(start, JumpState):
        raise ValidationError(f"Limit sampler needs a JumpState start, got {start!r}")
    if not K > 0:
        raise ValidationError(f"K must be positive, got {K}")
    if horizon < 0:
        raise ValidationError(f"Horizon must be non-negative, got {horizon}")
    gen = rng.generator()
    t = 0.0
    x, y0 = start.x, start.y
    jump_times: list[float] = []
    x_values = [x]
    y_starts = [y0]
    while True:
        gap = abs(y0 - x)
        if gap == 0.0:
            break
        draw = gen.standard_exponential()
        if draw >= gap / K:
            break
        wait = -math.log1p(-K * draw / gap) / K
        if t + wait > horizon:
            break
        t += wait
        y0 = min(1.0, max(0.0, _flow(x, y0, K, wait)))
        x = 1 - x
        jump_times.append(t)
        x_values.append(x)
        y_starts.append(y0)
    return JumpPath(tuple(jump_times), tuple(x_values), tuple(y_starts), horizon, K)


def sample_limit_ensemble(
    start: JumpState,
    K: float,
    times: Sequence[float],
    replicates: int,
    master_seed: int,
    first_replicate: int = 0,
    workers: int = 1,
) -> tuple[Ensemble, list[JumpPath]]:
    """Exact limit paths for replicate streams, evaluated on a time grid."""
    grid = sorted(set(times))
    if not grid or grid[0] < 0:
        raise ValidationError("Time grid must be non-empty and non-negative")
    if replicates < 1:
        raise ValidationError(f"replicates must be at least 1, got {replicates}")

    def run(lo: int, hi: int) -> tuple[np.ndarray, np.ndarray, list[JumpPath]]:
        xs = np.empty((hi - lo, len(grid)))
        ys = np.empty((hi - lo, len(grid)))
        paths = []
        for row, i in enumerate(range(lo, hi)):
            path = sample_limit_jump(start, K, grid[-1], RngStream(master_seed, first_replicate + i))
            for j, t in enumerate(grid):
                state = path.state_at(t)
                xs[row, j], ys[row, j] = state.x, state.y
            paths.append(path)
        return xs, ys, paths

    results = map_batches(run, replicate_batches(replicates, 10_000), workers)
    ensemble = Ensemble(
        times=np.array(grid),
        x=np.vstack([r[0] for r in results]),
        y=np.vstack([r[1] for r in results]),
        scheme=EXACT_SCHEME,
    )
    return ensemble, [p for r in results for p in r[2]]


def sample_two_island_limit(
    start: JumpState,
    K: float,
    horizon: float,
    h: float,
    rng: RngStream,
    diffusion: float = 1.0,
    grid: Sequence[float] | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> HybridPath:
    """Two-island limit: x jumps by thinning against the majorant rate 1, y moves by Euler-Maruyama.

    A candidate at time τ is accepted with probability equal to the hazard there (y when
    x = 0, 1 - y when x = 1), with y carried from the step start along the drift flow.
    With diffusion = 0 this reproduces the exact limit sampler.
    """
    if not isinstance(start, JumpState):
        raise ValidationError(f"Limit sampler needs a JumpState start, got {start!r}")
    if not K > 0:
        raise ValidationError(f"K must be positive, got {K}")
    if diffusion < 0:
        raise ValidationError(f"diffusion must be non-negative, got {diffusion}")
    grid = (0.0, horizon) if grid is None else tuple(grid)
    config = EmConfig(h=h, horizon=horizon, output_grid=grid, step_budget=step_budget)
    total_steps = int(round(horizon / h))
    _check_budget(total_steps, step_budget, "increase h or shorten the horizon")
    record = _record_steps(config.output_grid, h).tolist()

    gen = rng.generator()
    z = gen.standard_normal(total_steps).tolist()
    n_candidates = int(gen.poisson(horizon))
    candidates = np.sort(gen.uniform(0.0, horizon, n_candidates)).tolist()
    acceptance = gen.random(n_candidates).tolist()

    x, y = start.x, start.y
    sqrt_h = math.sqrt(h)
    jump_times: list[float] = []
    out_t: list[float] = []
    out_x: list[int] = []
    out_y: list[float] = []
    accepted = 0
    clamps = 0
    hazard_integral = 0.0
    cursor = 0
    slot = 0

    def emit(step: int) -> None:
        nonlocal slot
        while slot < len(record) and record[slot] == step:
            out_t.append(config.output_grid[slot])
            out_x.append(x)
            out_y.append(y)
            slot += 1

    relax = math.exp(-K * h)
    emit(0)
    for k in range(total_steps):
        step_start = k * h
        step_end = (k + 1) * h
        hazard_integral += (y if x == 0 else 1.0 - y) * h
        while cursor < n_candidates and candidates[cursor] <= step_end:
            y_now = _flow(x, y, K, candidates[cursor] - step_start)
            if acceptance[cursor] < (y_now if x == 0 else 1.0 - y_now):
                jump_times.append(candidates[cursor])
                accepted += 1
                x = 1 - x
            cursor += 1
        # Drift integrated exactly over the step, noise by Euler-Maruyama.
        y_next = x + (y - x) * relax + diffusion * math.sqrt(max(0.0, y * (1.0 - y))) * sqrt_h * z[k]
        if y_next < 0.0 or y_next > 1.0:
            clamps += 1
            y_next = min(1.0, max(0.0, y_next))
        y = y_next
        emit(k + 1)

    return HybridPath(
        jump_times=tuple(jump_times),
        times=tuple(out_t),
        x=tuple(out_x),
        y=tuple(out_y),
        candidates=cursor,
        accepted=accepted,
        hazard_integral=hazard_integral,
        clamp_events=clamps,
    )


def sample_two_island_limit_ensemble(
    start: JumpState,
    K: float,
    times: Sequence[float],
    h: float,
    replicates: int,
    master_seed: int,
    diffusion: float = 1.0,
    first_replicate: int = 0,
    workers: int = 1,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Ensemble:
    grid = sorted(set(times))
    if replicates < 1:
        raise ValidationError(f"replicates must be at least 1, got {replicates}")

    def run(lo: int, hi: int) -> list[HybridPath]:
        return [
            sample_two_island_limit(start, K, grid[-1], h, RngStream(master_seed, first_replicate + i),
                                    diffusion=diffusion, grid=grid, step_budget=step_budget)
            for i in range(lo, hi)
        ]

    paths = [p for batch in map_batches(run, replicate_batches(replicates, 1_000), workers) for p in batch]
    log.debug("Hybrid ensemble: %d paths, %d accepted jumps", len(paths), sum(p.accepted for p in paths))
    return Ensemble(
        times=np.array(grid),
        x=np.array([p.x for p in paths], dtype=float),
        y=np.array([p.y for p in paths], dtype=float),
        scheme=HYBRID_SCHEME,
        clamp_events=sum(p.clamp_events for p in paths),
        steps=int(round(grid[-1] / h)),
    )
