import numpy as np
import pytest

from src.models.errors import ValidationError
from src.utils.parallel import map_batches, replicate_batches
from src.utils.rng import RngStream, derive_seed


def test_same_stream_same_draws():
    a = RngStream(42, 3).generator().standard_normal(5)
    b = RngStream(42, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)


def test_streams_differ_by_index_and_seed():
    base = RngStream(42, 0).generator().random(4)
    assert not np.array_equal(base, RngStream(42, 1).generator().random(4))
    assert not np.array_equal(base, RngStream(43, 0).generator().random(4))


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    assert derive_seed(7, 0) != derive_seed(7, 1)
    assert 0 <= derive_seed(7, 2) < 2 ** 64


def test_invalid_streams_are_rejected():
    with pytest.raises(ValidationError):
        RngStream(-1, 0)
    with pytest.raises(ValidationError):
        RngStream(1, -2)
    with pytest.raises(ValidationError):
        RngStream(2 ** 64, 0)


def test_replicate_batches_partition_the_range():
    batches = replicate_batches(10, 4)
    assert batches == [(0, 4), (4, 8), (8, 10)]
    assert replicate_batches(0, 4) == []
    assert replicate_batches(3, 0) == [(0, 1), (1, 2), (2, 3)]


def test_map_batches_keeps_order_for_any_worker_count():
    def draw(lo, hi):
        return [float(RngStream(9, i).generator().random()) for i in range(lo, hi)]

    batches = replicate_batches(37, 5)
    serial = map_batches(draw, batches, workers=1)
    threaded = map_batches(draw, batches, workers=4)
    assert serial == threaded
    assert sum(len(b) for b in serial) == 37
