"""Pure numpy/Python versions of the compiled kernels.

Both backends must return identical arrays; tests/test_kernels.py runs them
side by side.
"""
from collections import deque

import numpy as np


def _orient(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _pair_score(a, b):
    mismatch = ((a < 0) & (b > 0)) | ((a > 0) & (b < 0))
    m = np.minimum(np.abs(a), np.abs(b))
    return np.where(mismatch, -2.0 * m, m)


def pixel_margins(segs, q):
    """Signed crossing margin of each segment against each pixel of a q x q grid.

    ``segs`` is (n, 4): px, py, qx, qy in raw pixel coordinates.  Output is
    (n, q, q) indexed ``[k, i-1, j-1]`` for pixel (i, j) covering
    [i-1, i] x [j-1, j].  Negative entries are pixels whose boundary the
    segment strictly crosses; the value then equals min over edges of
    max(m12, m34) with m(a, b) = |a+b| - |a| - |b|.  Non-negative entries
    give the distance (in orientation units) to the nearest strict crossing.
    """
    segs = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    px, py, qx, qy = (segs[:, k][:, None, None] for k in range(4))
    ii, jj = np.meshgrid(np.arange(q, dtype=np.float64), np.arange(q, dtype=np.float64),
                         indexing="ij")
    corners = [(ii, jj), (ii + 1, jj), (ii + 1, jj + 1), (ii, jj + 1)]
    best = None
    for e in range(4):
        (ax, ay), (bx, by) = corners[e], corners[(e + 1) % 4]
        o1 = _orient(ax, ay, bx, by, px, py)
        o2 = _orient(ax, ay, bx, by, qx, qy)
        o3 = _orient(px, py, qx, qy, ax, ay)
        o4 = _orient(px, py, qx, qy, bx, by)
        edge = np.maximum(_pair_score(o1, o2), _pair_score(o3, o4))
        best = edge if best is None else np.minimum(best, edge)
    return best


def bounded_bfs(indptr, indices, init_mask, horizon):
    """Layered breadth-first search over a CSR adjacency, at most ``horizon`` steps.

    Returns (dist, parent): dist[s] is the fewest steps from the initial set
    (-1 if not reached within the horizon) and parent[s] the predecessor on
    one shortest path (-1 for initial or unreached states).
    """
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int32)
    parent = np.full(n, -1, dtype=np.int32)
    queue = deque()
    for s in np.flatnonzero(init_mask):
        dist[s] = 0
        queue.append(int(s))
    while queue:
        s = queue.popleft()
        d = dist[s]
        if d >= horizon:
            continue
        for t in indices[indptr[s]:indptr[s + 1]]:
            if dist[t] < 0:
                dist[t] = d + 1
                parent[t] = s
                queue.append(int(t))
    return dist, parent
