import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

from src.constants import MAX_MOMENT_EXPONENT
from src.models.errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeedbankParams:
    c: float
    K: float
    alpha_prime: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValidationError(f"c must be positive, got {self.c}")
        if not (math.isfinite(self.K) and self.K > 0):
            raise ValidationError(f"K must be positive, got {self.K}")
        if self.alpha_prime is not None and not (math.isfinite(self.alpha_prime) and self.alpha_prime >= 0):
            raise ValidationError(f"alpha_prime must be non-negative, got {self.alpha_prime}")


@dataclass(frozen=True)
class InitialBlocks:
    n0: int
    m0: int

    def __post_init__(self) -> None:
        if self.n0 < 0 or self.m0 < 0:
            raise ValidationError(f"Lineage counts must be non-negative, got ({self.n0}, {self.m0})")
        if self.n0 + self.m0 < 1:
            raise ValidationError("At least one lineage is required (n0 + m0 >= 1)")

    @property
    def total(self) -> int:
        return self.n0 + self.m0

    @property
    def state(self) -> tuple[int, int]:
        return self.n0, self.m0


def _strictly_increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class ScalingSequence:
    """Scale parameters c_κ with the discretization density a_κ and speed-up b_κ."""

    c_values: tuple[float, ...]
    a_of: Callable[[float], float]
    b_of: Callable[[float], float]

    def __post_init__(self) -> None:
        if not self.c_values:
            raise ValidationError("Scaling sequence needs at least one c value")
        if any(c <= 0 for c in self.c_values):
            raise ValidationError(f"Scale parameters must be positive, got {self.c_values}")
        if not all(b < a for a, b in zip(self.c_values, self.c_values[1:])):
            raise ValidationError(f"c values must be strictly decreasing, got {self.c_values}")
        if not self.growth_ok():
            log.warning("Scaling sequence does not have a_kappa and b_kappa/a_kappa increasing along %s", self.c_values)

    @classmethod
    def seedbank(cls, c_values: Sequence[float]) -> "ScalingSequence":
        """a_κ = c_κ^-2, b_κ = c_κ^-3."""
        return cls(tuple(c_values), a_of=lambda c: c ** -2, b_of=lambda c: c ** -3)

    def growth_ok(self) -> bool:
        if len(self.c_values) == 1:
            return True
        a_values = [self.a_of(c) for c in self.c_values]
        speedup = [self.b_of(c) / a for c, a in zip(self.c_values, a_values)]
        return _strictly_increasing(a_values) and _strictly_increasing(speedup)

    def a(self, c: float) -> float:
        return self.a_of(c)

    def b(self, c: float) -> float:
        return self.b_of(c)


@dataclass(frozen=True)
class MomentGrid:
    """Exponent pairs (n, m), starting frequencies (x, y) and times for moment comparisons."""

    pairs: tuple[tuple[int, int], ...]
    points: tuple[tuple[float, float], ...]
    times: tuple[float, ...]
    max_exponent: int = MAX_MOMENT_EXPONENT

    def __post_init__(self) -> None:
        if not self.pairs:
            raise ValidationError("Moment grid needs at least one (n, m) pair")
        for n, m in self.pairs:
            if n < 0 or m < 0 or n > self.max_exponent or m > self.max_exponent:
                raise ValidationError(f"Exponents must lie in 0..{self.max_exponent}, got ({n}, {m})")
        if not self.points:
            raise ValidationError("Moment grid needs at least one starting point")
        for x, y in self.points:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValidationError(f"Starting frequencies must lie in [0, 1], got ({x}, {y})")
        if not self.times or any(not t > 0 for t in self.times):
            raise ValidationError(f"Times must be positive, got {self.times}")

    @property
    def max_total(self) -> int:
        return max(n + m for n, m in self.pairs)
