"""Compiled vs pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per kernel and backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from visland._kernels import _pykernels

try:
    from visland._kernels import _ckernels
except ImportError:
    _ckernels = None


def _csr(rng, n, deg):
    cols = rng.integers(0, n, size=(n, deg))
    indptr = np.arange(0, n * deg + 1, deg, dtype=np.int64)
    return indptr, np.sort(cols, axis=1).ravel().astype(np.int64)


def cases():
    rng = np.random.default_rng(0)
    out = []
    for q in (8, 16):
        segs = rng.uniform(-2, q + 2, size=(2000, 4))
        out.append((f"pixel_margins q={q} 2000 segs", "pixel_margins", (segs, q)))
    for n in (513, 20000):
        indptr, indices = _csr(rng, n, 8)
        init = np.zeros(n, dtype=bool)
        init[:4] = True
        out.append((f"bounded_bfs n={n} deg=8 T=25", "bounded_bfs", (indptr, indices, init, 25)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the Python backend is timed")
    print(f"{'case':38s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, fn, a in cases():
        tp = min(timeit.repeat(lambda: getattr(_pykernels, fn)(*a), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{label:38s} {1e3 * tp:10.2f} {'-':>10s} {'-':>8s}")
            continue
        tc = min(timeit.repeat(lambda: getattr(_ckernels, fn)(*a), number=1, repeat=args.repeat))
        print(f"{label:38s} {1e3 * tp:10.2f} {1e3 * tc:10.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
