import math

import numpy as np
import pytest

from helpers import gradcheck
from tinytransducer.positional import (
    LearnedAPE,
    PositionOverflowError,
    RpeTable,
    SinusoidalPE,
    apply_ape,
    relative_index,
    relative_rows,
    sinusoidal_pe,
)
from tinytransducer.tensor import Tensor


def test_sinusoid_closed_form():
    d = 10
    assert sinusoidal_pe(3, 4, d) == pytest.approx(math.sin(3 / 10000 ** 0.4))
    assert sinusoidal_pe(3, 5, d) == pytest.approx(math.cos(3 / 10000 ** 0.4))
    table = SinusoidalPE(d, max_precomputed=4).matrix(40)   # grows past the cache
    for pos in (0, 7, 39):
        for i in range(d):
            assert table[pos, i] == pytest.approx(sinusoidal_pe(pos, i, d), abs=1e-6)


def test_apply_ape_none_is_identity():
    x = Tensor(np.ones((1, 3, 4)))
    assert apply_ape(x, "none") is x


def test_learned_ape_overflow():
    ape = LearnedAPE(5, 4, np.random.default_rng(0))
    assert ape.lookup(5).shape == (5, 4)
    with pytest.raises(PositionOverflowError):
        ape.lookup(6)


def test_relative_index_values():
    idx = relative_index(3, 4, 1)
    # row i, column j holds clip(j - i, -1, 1) + 1
    np.testing.assert_array_equal(idx, [[1, 2, 2, 2], [0, 1, 2, 2], [0, 0, 1, 2]])


def test_clipping_law_exhaustive():
    r = np.random.default_rng(0)
    for k in range(0, 17):
        table = RpeTable(k, 3, r)
        for n in (1, 2, 17, 64):
            rows = relative_rows(n, n, table).data
            i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            off = j - i
            far_right = off > k
            far_left = off < -k
            assert (rows[far_right] == table.w.data[2 * k]).all()
            assert (rows[far_left] == table.w.data[0]).all()
            inside = ~(far_left | far_right)
            np.testing.assert_array_equal(rows[inside], table.w.data[off[inside] + k])


def test_relative_rows_gradient():
    table = RpeTable(2, 3, np.random.default_rng(1))
    assert gradcheck(lambda: relative_rows(4, 6, table), [table.w]) < 1e-3


def test_zero_init_without_rng():
    assert not RpeTable(3, 4).w.data.any()
    with pytest.raises(ValueError):
        RpeTable(-1, 4)
