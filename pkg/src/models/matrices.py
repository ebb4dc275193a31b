"""Dense matrices over enumerated finite state spaces of lineage counts."""

import bisect
import logging
from dataclasses import dataclass, field

import numpy as np

from src.constants import TOLERANCES
from src.models.errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

State = tuple[int, int]


def state_label(state: State) -> str:
    return f"{state[0]}:{state[1]}"


def parse_state_label(label: str) -> State:
    n, m = label.split(":")
    return int(n), int(m)


@dataclass(frozen=True)
class StateSpace:
    states: tuple[State, ...]
    _index: dict[State, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[State, int] = {}
        for i, state in enumerate(self.states):
            if state in index:
                raise ValidationError(f"Duplicate state {state_label(state)} in state space")
            index[state] = i
        object.__setattr__(self, "_index", index)

    @classmethod
    def seedbank(cls, n0: int, m0: int) -> "StateSpace":
        """All (n, m) with n + m <= n0 + m0, ordered by n then m.

        Lineage totals never increase, so the chain started in (n0, m0) stays here.
        """
        total = n0 + m0
        return cls(tuple((n, m) for n in range(total + 1) for m in range(total + 1 - n)))

    @classmethod
    def reduced(cls, m_max: int) -> "StateSpace":
        return cls(tuple((n, m) for n in (0, 1) for m in range(m_max + 1)))

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, state: object) -> bool:
        return state in self._index

    def index(self, state: State) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise ValidationError(f"State {state_label(state)} is outside the state space") from None

    def state(self, i: int) -> State:
        return self.states[i]

    def labels(self) -> list[str]:
        return [state_label(s) for s in self.states]


def _frozen_array(entries, space: StateSpace) -> np.ndarray:
    array = np.array(entries, dtype=float)
    size = len(space)
    if array.shape != (size, size):
        raise ValidationError(f"Matrix shape {array.shape} does not match state space of size {size}")
    array.setflags(write=False)
    return array


def conservative_violation(entries: np.ndarray, tol: float = TOLERANCES.build) -> int | None:
    """Index of the first row that breaks the Q-matrix conditions, or None."""
    off_diagonal = entries - np.diag(np.diag(entries))
    bad_sign = np.flatnonzero((off_diagonal < -tol).any(axis=1))
    bad_sum = np.flatnonzero(np.abs(entries.sum(axis=1)) > tol)
    rows = sorted(set(bad_sign.tolist()) | set(bad_sum.tolist()))
    return rows[0] if rows else None


@dataclass(frozen=True, eq=False)
class GeneralMatrix:
    space: StateSpace
    entries: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _frozen_array(self.entries, self.space))
        if not np.all(np.isfinite(self.entries)):
            raise NumericalError("Matrix has non-finite entries")

    def __getitem__(self, key: tuple[State, State]) -> float:
        src, dst = key
        return float(self.entries[self.space.index(src), self.space.index(dst)])

    def row(self, state: State) -> np.ndarray:
        return self.entries[self.space.index(state)]


@dataclass(frozen=True, eq=False)
class RateMatrix(GeneralMatrix):
    # States whose outgoing transitions were cut off by a truncated state space.
    truncated_states: tuple[State, ...] = ()

    def __post_init__(self) -> None:
        super().__post_init__()
        bad = conservative_violation(self.entries)
        if bad is not None:
            raise ValidationError(
                f"Rate matrix is not conservative in row {state_label(self.space.state(bad))}: "
                f"{self.entries[bad].tolist()}"
            )


@dataclass(frozen=True, eq=False)
class TransitionMatrix(GeneralMatrix):
    def __post_init__(self) -> None:
        super().__post_init__()
        tol = TOLERANCES.build
        entries = self.entries
        if (entries < -tol).any() or (entries > 1 + tol).any():
            worst = float(np.max(np.maximum(-entries, entries - 1)))
            raise NumericalError(f"Transition probabilities leave [0, 1] by {worst:.3e}")
        clipped = np.clip(entries, 0.0, 1.0)
        if not np.array_equal(clipped, entries):
            log.debug("Clipped %d transition entries by at most %.2e",
                      int(np.count_nonzero(clipped != entries)), float(np.max(np.abs(clipped - entries))))
        row_error = np.abs(clipped.sum(axis=1) - 1.0)
        if row_error.max(initial=0.0) > TOLERANCES.stochastic:
            bad = int(np.argmax(row_error))
            raise NumericalError(
                f"Row {state_label(self.space.state(bad))} sums to {clipped[bad].sum():.12f}, not 1"
            )
        object.__setattr__(self, "entries", _frozen_array(clipped, self.space))


def identity(space: StateSpace) -> TransitionMatrix:
    return TransitionMatrix(space, np.eye(len(space)))


@dataclass(frozen=True)
class PathSample:
    jump_times: tuple[float, ...]
    visited: tuple[State, ...]
    horizon: float

    def __post_init__(self) -> None:
        if len(self.visited) != len(self.jump_times) + 1:
            raise ValidationError("A path visits exactly one more state than it has jumps")

    def state_at(self, t: float) -> State:
        """State occupied at time t (right-continuous)."""
        return self.visited[bisect.bisect_right(self.jump_times, t)]

    def occupation_time(self, state: State) -> float:
        boundaries = (0.0, *self.jump_times, self.horizon)
        return sum(
            boundaries[i + 1] - boundaries[i] for i, visited in enumerate(self.visited) if visited == state
        )
