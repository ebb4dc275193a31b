"""Structured results of the scaling-limit pipeline and the verification experiments."""

from dataclasses import dataclass, field

from src.models.matrices import GeneralMatrix, State, TransitionMatrix


@dataclass(frozen=True)
class StepRecord:
    c: float
    a: float
    q: float
    ratio: float
    rate_bound: float | None = None


@dataclass(frozen=True)
class StepConditionReport:
    records: tuple[StepRecord, ...]
    verdict: bool


@dataclass(frozen=True)
class ProjectionResidual:
    C: float
    steps: int
    residual: float
    entry_error: float
    absorption_bound: float | None = None


@dataclass(frozen=True, eq=False)
class LimitResult:
    P_hat: GeneralMatrix
    G_hat: GeneralMatrix
    projection_residuals: tuple[ProjectionResidual, ...]
    pbp_residuals: tuple[tuple[float, float], ...]  # (c, ||P B_κ P - G_hat||)
    rounding_error: float = 0.0
    cauchy_gaps: tuple[float, ...] = ()


@dataclass(frozen=True)
class DiscretizationRecord:
    c: float
    t: float
    steps: int
    tv: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.tv <= self.bound + 1e-9


@dataclass(frozen=True)
class DiscretizationReport:
    records: tuple[DiscretizationRecord, ...]

    @property
    def passed(self) -> bool:
        return all(r.within_bound for r in self.records)

    @property
    def bounds_decreasing(self) -> bool:
        by_t: dict[float, list[float]] = {}
        for r in self.records:
            by_t.setdefault(r.t, []).append(r.bound)
        return all(all(b < a for a, b in zip(v, v[1:])) for v in by_t.values())


@dataclass(frozen=True, eq=False)
class TimescaleReport:
    step_condition: StepConditionReport
    limit: LimitResult
    discretization: DiscretizationReport
    semigroup: dict[float, TransitionMatrix] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.step_condition.verdict and self.discretization.passed


@dataclass(frozen=True)
class DualityCell:
    n: int
    m: int
    x: float
    y: float
    t: float
    chain_exact: float
    mc_mean: float
    mc_sigma: float
    passed: bool


@dataclass(frozen=True)
class DualityReport:
    cells: tuple[DualityCell, ...]
    n_sigma: float
    bias_allowance: float
    model: str = "seedbank"

    @property
    def passed(self) -> bool:
        return all(cell.passed for cell in self.cells)

    @property
    def failures(self) -> list[DualityCell]:
        return [cell for cell in self.cells if not cell.passed]


@dataclass(frozen=True)
class TvRecord:
    c: float
    t: float
    tv: float


@dataclass(frozen=True)
class JointTvRecord:
    c: float
    t1: float
    t2: float
    tv: float


@dataclass(frozen=True)
class SparkRecord:
    c: float
    replicates: int
    occupation_fraction: float
    excursions_per_path: float


@dataclass(frozen=True)
class ConvergenceReport:
    start: State
    records: tuple[TvRecord, ...]
    joint_records: tuple[JointTvRecord, ...] = ()
    monotone: dict[float, bool] = field(default_factory=dict)
    target_met: bool | None = None

    @property
    def passed(self) -> bool:
        joint_ok = _joint_decreasing(self.joint_records)
        return all(self.monotone.values()) and joint_ok


def _joint_decreasing(records: tuple[JointTvRecord, ...]) -> bool:
    by_pair: dict[tuple[float, float], list[float]] = {}
    for r in records:
        by_pair.setdefault((r.t1, r.t2), []).append(r.tv)
    return all(all(b < a for a, b in zip(v, v[1:])) for v in by_pair.values())


@dataclass(frozen=True)
class FixationRecord:
    t: float
    mean: float
    sigma: float
    expected: float
    passed: bool


@dataclass(frozen=True)
class FixationReport:
    process: str
    records: tuple[FixationRecord, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)
