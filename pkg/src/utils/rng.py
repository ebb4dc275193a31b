"""Counter-based random streams.

Each replicate draws from its own generator seeded by (master_seed, replicate_index),
so Monte Carlo output does not depend on execution order or worker count.
"""

from dataclasses import dataclass

import numpy as np

from src.models.errors import ValidationError

SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    replicate_index: int

    def __post_init__(self) -> None:
        if not 0 <= self.master_seed <= SEED_MASK:
            raise ValidationError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if self.replicate_index < 0:
            raise ValidationError(f"replicate_index must be non-negative, got {self.replicate_index}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.replicate_index,))
        return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, *labels: int) -> int:
    """Mix a master seed with integer labels into a new 64-bit seed."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(labels))
    return int(seq.generate_state(1, dtype=np.uint64)[0])

