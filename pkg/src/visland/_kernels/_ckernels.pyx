# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in _pykernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef inline double _orient(double ax, double ay, double bx, double by,
                           double px, double py) nogil:
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


cdef inline double _pair_score(double a, double b) nogil:
    cdef double m = fabs(a)
    if fabs(b) < m:
        m = fabs(b)
    if (a < 0 and b > 0) or (a > 0 and b < 0):
        return -2.0 * m
    return m


def pixel_margins(segs, int q):
    cdef double[:, ::1] s = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = s.shape[0]
    out = np.empty((n, q, q), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double cx[4]
    cdef double cy[4]
    cdef Py_ssize_t k, i, j, e
    cdef double px, py, qx, qy, ax, ay, bx, by, edge, best, s12, s34
    with nogil:
        for k in range(n):
            px = s[k, 0]
            py = s[k, 1]
            qx = s[k, 2]
            qy = s[k, 3]
            for i in range(q):
                for j in range(q):
                    cx[0] = i
                    cy[0] = j
                    cx[1] = i + 1
                    cy[1] = j
                    cx[2] = i + 1
                    cy[2] = j + 1
                    cx[3] = i
                    cy[3] = j + 1
                    best = 0.0
                    for e in range(4):
                        ax = cx[e]
                        ay = cy[e]
                        bx = cx[(e + 1) % 4]
                        by = cy[(e + 1) % 4]
                        s12 = _pair_score(_orient(ax, ay, bx, by, px, py),
                                          _orient(ax, ay, bx, by, qx, qy))
                        s34 = _pair_score(_orient(px, py, qx, qy, ax, ay),
                                          _orient(px, py, qx, qy, bx, by))
                        edge = s12 if s12 > s34 else s34
                        if e == 0 or edge < best:
                            best = edge
                    o[k, i, j] = best
    return out


def bounded_bfs(indptr, indices, init_mask, int horizon):
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef cnp.uint8_t[::1] init = np.ascontiguousarray(init_mask, dtype=np.uint8)
    cdef Py_ssize_t n = ip.shape[0] - 1
    dist_arr = np.full(n, -1, dtype=np.int32)
    parent_arr = np.full(n, -1, dtype=np.int32)
    queue_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef cnp.int32_t[::1] dist = dist_arr
    cdef cnp.int32_t[::1] parent = parent_arr
    cdef cnp.int64_t[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, s, p, t
    cdef int d
    with nogil:
        for s in range(n):
            if init[s]:
                dist[s] = 0
                queue[tail] = s
                tail += 1
        while head < tail:
            s = queue[head]
            head += 1
            d = dist[s]
            if d >= horizon:
                continue
            for p in range(ip[s], ip[s + 1]):
                t = ix[p]
                if dist[t] < 0:
                    dist[t] = d + 1
                    parent[t] = <cnp.int32_t>s
                    queue[tail] = t
                    tail += 1
    return dist_arr, parent_arr
