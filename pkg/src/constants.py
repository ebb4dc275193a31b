from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    build: float = 1e-12
    stochastic: float = 1e-10
    algebraic: float = 1e-8
    poisson_tail: float = 1e-12
    rounding: float = 0.05
    distribution_sum: float = 1e-8


TOLERANCES = Tolerances()

BUILD_ID = "seedbank-scaling 0.1.0"
# numpy Generator.standard_normal uses the ziggurat method.
NORMAL_METHOD = "numpy-ziggurat"

DEFAULT_K = 1.0
DEFAULT_H = 1e-3
DEFAULT_REPLICATES = 10_000
DEFAULT_SEED = 42
DEFAULT_STEP_BUDGET = 100_000_000
DEFAULT_BIAS_ALLOWANCE = 5e-3
DEFAULT_N_SIGMA = 3.0
MAX_MOMENT_EXPONENT = 4

COMMANDS = ("rates", "limit-chain", "timescale", "simulate", "duality", "converge", "spark", "dump-matrix")
MODELS = ("seedbank", "two-island")
