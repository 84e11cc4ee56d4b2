"""The compiled and pure-Python kernels must agree exactly."""
import numpy as np
import pytest

from visland import _kernels
from visland._kernels import _pykernels

ck = pytest.importorskip("visland._kernels._ckernels")


def test_backend_name():
    assert _kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("q", [2, 8, 16])
def test_pixel_margins_backends_agree(q):
    rng = np.random.default_rng(q)
    segs = rng.uniform(-2, q + 2, size=(300, 4))
    # a few segments on grid lines and corners, where ties matter
    segs[:20] = rng.integers(0, q + 1, size=(20, 4))
    a = _pykernels.pixel_margins(segs, q)
    b = ck.pixel_margins(segs, q)
    assert a.shape == (300, q, q)
    np.testing.assert_array_equal(a, b)


def _random_csr(rng, n, p):
    adj = rng.random((n, n)) < p
    indptr = np.concatenate([[0], np.cumsum(adj.sum(1))]).astype(np.int64)
    indices = np.concatenate([np.flatnonzero(r) for r in adj]).astype(np.int64)
    return indptr, indices


@pytest.mark.parametrize("seed", range(5))
def test_bounded_bfs_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = 60
    indptr, indices = _random_csr(rng, n, 0.04)
    init = rng.random(n) < 0.05
    for horizon in (0, 1, 3, 20):
        d1, p1 = _pykernels.bounded_bfs(indptr, indices, init, horizon)
        d2, p2 = ck.bounded_bfs(indptr, indices, init, horizon)
        np.testing.assert_array_equal(d1, d2)
        np.testing.assert_array_equal(p1, p2)
        assert d1.max() <= horizon
