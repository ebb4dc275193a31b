import bisect
import math
from dataclasses import dataclass

import numpy as np

from src.constants import DEFAULT_STEP_BUDGET
from src.models.errors import ValidationError


def _check_frequency(name: str, value: float) -> None:
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class DiffusionState:
    x: float
    y: float

    def __post_init__(self) -> None:
        _check_frequency("x", self.x)
        _check_frequency("y", self.y)


@dataclass(frozen=True)
class JumpState:
    x: int
    y: float

    def __post_init__(self) -> None:
        if self.x not in (0, 1):
            raise ValidationError(f"Jump-process x must be 0 or 1, got {self.x}")
        _check_frequency("y", self.y)


@dataclass(frozen=True)
class EmConfig:
    h: float
    horizon: float
    output_grid: tuple[float, ...]
    step_budget: int = DEFAULT_STEP_BUDGET

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise ValidationError(f"h must be positive, got {self.h}")
        grid = sorted(set(self.output_grid))
        if not grid or grid[0] < 0 or grid[-1] > self.horizon + 1e-12:
            raise ValidationError(f"Output grid must be non-empty and inside [0, {self.horizon}]")
        gaps = [b - a for a, b in zip(grid, grid[1:])]
        if gaps and self.h > min(gaps) + 1e-15:
            raise ValidationError(f"h={self.h} exceeds the smallest output-grid gap {min(gaps)}")
        object.__setattr__(self, "output_grid", tuple(grid))


@dataclass(frozen=True, eq=False)
class Ensemble:
    """States of many replicates recorded on a common time grid."""

    times: np.ndarray
    x: np.ndarray  # shape (replicates, len(times))
    y: np.ndarray
    scheme: str
    clamp_events: int = 0
    steps: int = 0

    @property
    def replicates(self) -> int:
        return int(self.x.shape[0])

    @property
    def clamp_frequency(self) -> float:
        """Clamp events per replicate step; 0 when nothing was stepped."""
        if self.steps == 0:
            return 0.0
        return self.clamp_events / (self.steps * self.replicates)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-12))
        if hits.size == 0:
            raise ValidationError(f"Time {t} was not recorded; grid is {self.times.tolist()}")
        j = int(hits[0])
        return self.x[:, j], self.y[:, j]


@dataclass(frozen=True)
class JumpPath:
    """Exact path of the limit jump process: x piecewise constant, y on the flow toward x."""

    jump_times: tuple[float, ...]
    x_values: tuple[int, ...]
    y_starts: tuple[float, ...]
    horizon: float
    K: float

    def segment_start(self, segment: int) -> float:
        return 0.0 if segment == 0 else self.jump_times[segment - 1]

    def state_at(self, t: float) -> JumpState:
        segment = bisect.bisect_right(self.jump_times, t)
        x = self.x_values[segment]
        elapsed = t - self.segment_start(segment)
        y = x + (self.y_starts[segment] - x) * math.exp(-self.K * elapsed)
        return JumpState(x, min(1.0, max(0.0, y)))


@dataclass(frozen=True)
class HybridPath:
    jump_times: tuple[float, ...]
    times: tuple[float, ...]
    x: tuple[int, ...]
    y: tuple[float, ...]
    candidates: int
    accepted: int
    hazard_integral: float
    clamp_events: int = 0
