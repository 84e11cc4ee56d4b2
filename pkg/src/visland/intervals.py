"""Outward-rounded interval arithmetic on numpy arrays.

An interval is a pair (lo, hi) of equally shaped float arrays.  Every
operation widens its result by one ulp in each direction so that rounding
never shrinks an enclosure.
"""
from __future__ import annotations

import numpy as np

from .geometry import GeometryError


class EmptyInterval(GeometryError):
    pass


def _out(lo, hi):
    return np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)


def iv(lo, hi=None):
    lo = np.asarray(lo, dtype=np.float64)
    hi = lo if hi is None else np.asarray(hi, dtype=np.float64)
    if np.any(lo > hi):
        raise EmptyInterval("lower bound above upper bound")
    return lo.copy(), hi.copy()


def add(a, b):
    return _out(a[0] + b[0], a[1] + b[1])


def sub(a, b):
    return _out(a[0] - b[1], a[1] - b[0])


def neg(a):
    return -a[1], -a[0]


def shift(a, c):
    return _out(a[0] + c, a[1] + c)


def scale(a, c):
    c = np.asarray(c, dtype=np.float64)
    lo, hi = a[0] * c, a[1] * c
    return _out(np.minimum(lo, hi), np.maximum(lo, hi))


def mul(a, b):
    p = np.stack([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    return _out(p.min(axis=0), p.max(axis=0))


def recip(a):
    if np.any((a[0] <= 0) & (a[1] >= 0)):
        raise GeometryError("division by an interval containing zero")
    return _out(1.0 / a[1], 1.0 / a[0])


def div(a, b):
    return mul(a, recip(b))


def cos(a):
    lo, hi = a
    c_lo, c_hi = np.cos(lo), np.cos(hi)
    out_lo, out_hi = np.minimum(c_lo, c_hi), np.maximum(c_lo, c_hi)
    # interior extrema at multiples of pi
    k_max = np.ceil(lo / (2 * np.pi))
    has_max = 2 * np.pi * k_max <= hi
    k_min = np.ceil((lo - np.pi) / (2 * np.pi))
    has_min = 2 * np.pi * k_min + np.pi <= hi
    out_hi = np.where(has_max, 1.0, out_hi)
    out_lo = np.where(has_min, -1.0, out_lo)
    lo2, hi2 = _out(out_lo, out_hi)
    return np.maximum(lo2, -1.0), np.minimum(hi2, 1.0)


def sin(a):
    return cos(shift(a, -np.pi / 2))


def arccos(a):
    """Monotone decreasing on [-1, 1]; the argument is clipped to that range."""
    lo, hi = np.clip(a[0], -1, 1), np.clip(a[1], -1, 1)
    return _out(np.arccos(hi), np.arccos(lo))


def sqrt(a):
    if np.any(a[1] < 0):
        raise EmptyInterval("sqrt of a negative interval")
    return _out(np.sqrt(np.maximum(a[0], 0.0)), np.sqrt(a[1]))


def intersect(a, lo=-np.inf, hi=np.inf):
    """Clip to [lo, hi]; raises EmptyInterval when nothing remains."""
    l2, h2 = np.maximum(a[0], lo), np.minimum(a[1], hi)
    if np.any(l2 > h2):
        raise EmptyInterval("empty intersection")
    return l2, h2


def contains(a, x, tol=0.0):
    x = np.asarray(x)
    return bool(np.all(a[0] - tol <= x) and np.all(x <= a[1] + tol))


def width(a):
    return a[1] - a[0]
