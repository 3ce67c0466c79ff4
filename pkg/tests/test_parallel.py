from __future__ import annotations

import numpy as np
import pytest

from kpzh_lab._parallel import block_ranges, concat_blocks, resolve_threads, run_blocks


def test_block_ranges_cover():
    assert block_ranges(10, 4) == [(0, 0, 4), (1, 4, 8), (2, 8, 10)]
    assert block_ranges(0, 4) == []
    with pytest.raises(ValueError):
        block_ranges(5, 0)


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("KPZH_LAB_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("KPZH_LAB_THREADS")
    assert resolve_threads() == 1
    with pytest.raises(ValueError):
        resolve_threads(0)


@pytest.mark.parametrize("threads", [1, 2, 4])
def test_results_independent_of_threads(threads):
    def work(b, size):
        return np.random.default_rng(b).standard_normal(size)

    out = concat_blocks(run_blocks(work, 1000, 64, threads))
    ref = concat_blocks(run_blocks(work, 1000, 64, 1))
    np.testing.assert_array_equal(out, ref)
    assert out.size == 1000


def test_concat_tuples():
    parts = [(np.zeros(2), np.ones(2)), (np.zeros(1), np.ones(1))]
    a, b = concat_blocks(parts)
    assert a.size == 3 and b.sum() == 3
