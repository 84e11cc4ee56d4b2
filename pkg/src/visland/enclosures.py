"""Interval enclosures between state boxes, working-coordinate cells and the
full network input.

With the lateral offset fixed, everything a cell of (z1, z2, z3) needs can be
written in closed form: the depths are a = fx X / s1 and b = fx X / s3, the
pitch cosine is (b - a) / rl, and the second line is an exact affine image
of the first (same depths, same rows, columns scaled by X_R / X_L).
"""
from __future__ import annotations

import numpy as np

from . import intervals as I
from .geometry import DegenerateInverse, GeometryError


class VacuousRegion(GeometryError):
    """No state with the configured offsets maps into the region."""


def working_box_to_input_box(lo, hi, geometry):
    """Enclosure (lo, hi) of the full network input over a working-coordinate box.

    Depths may be unbounded over the box (cells touching the principal
    column hold arbitrarily distant states); the enclosure stays finite
    because only 1/a, 1/b and a/b, which lies in (0, 1], enter it.
    Raises VacuousRegion when the box holds no feasible point.
    """
    cam, rw = geometry.camera, geometry.runway
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    X = rw.Lx + geometry.x_offset
    if X == 0:
        raise DegenerateInverse("line L passes through the camera column")
    sign = np.sign(X)
    z1, z2, z3 = (I.iv(lo[k], hi[k]) for k in range(3))
    s1 = I.shift(z1, -cam.u0)
    s3 = I.shift(z3, -cam.u0)
    # feasible points have 0 < S3 < S1 (positive depths, far end deeper)
    S1 = I.scale(s1, sign)
    S3 = I.scale(s3, sign)
    if S1[1] <= 0 or S3[1] <= 0 or S3[0] >= S1[1]:
        raise VacuousRegion("no positive depths with the far end behind the near end")
    S1 = (np.maximum(S1[0], 0.0), S1[1])
    S3 = (np.maximum(S3[0], 0.0), np.minimum(S3[1], S1[1]))
    fX = cam.fx * abs(X)

    def depth(S):
        # overflow to inf is the intended answer next to the principal column
        with np.errstate(over="ignore"):
            d_lo = np.nextafter(fX / S[1], -np.inf)
            d_hi = np.nextafter(fX / S[0], np.inf) if S[0] > 0 else np.inf
        return d_lo, d_hi

    a, b = depth(S1), depth(S3)
    c = (np.nextafter((b[0] - a[1]) / rw.rl, -np.inf), np.nextafter((b[1] - a[0]) / rw.rl, np.inf))
    if c[1] <= 0 or c[0] > 1:
        raise VacuousRegion("no admissible pitch in the cell")
    c = I.intersect(c, 0.0, 1.0)
    sn = I.sqrt(I.intersect(I.sub(I.iv(1.0), I.mul(c, c)), 0.0, 1.0))
    if geometry.pitch_sign < 0:
        sn = I.neg(sn)
    t2 = I.scale(I.shift(z2, -cam.v0), -1.0 / cam.fy)
    inv_b = I.scale(S3, 1.0 / fX)
    if S1[0] > 0:
        ratio = I.intersect(I.div(S3, S1), 0.0, 1.0)
    else:
        ratio = (np.nextafter(S3[0] / S1[1], -np.inf), np.float64(1.0))
    # z4 = v0 - fy (rl sin + t2 a) / b
    z4 = I.shift(I.scale(I.add(I.scale(I.mul(sn, inv_b), rw.rl), I.mul(t2, ratio)), -cam.fy),
                 cam.v0)
    out = []
    for which in geometry.lines:
        k = (rw.line_x(which) + geometry.x_offset) / X
        w1 = I.shift(I.scale(S1, sign * k), cam.u0)
        w3 = I.shift(I.scale(S3, sign * k), cam.u0)
        z5 = I.sub(I.mul(w1, z4), I.mul(z2, w3))
        out += [w1, z2, w3, z4, z5]
    blo = np.array([float(v[0]) for v in out])
    bhi = np.array([float(v[1]) for v in out])
    # line L's first three coordinates are the cell itself
    if geometry.lines[0] == "L":
        blo[:3] = np.maximum(blo[:3], lo)
        bhi[:3] = np.minimum(bhi[:3], hi)
    return blo, bhi


def state_box_to_working_box(lo, hi, runway, camera):
    """Enclosure of (z1, z2, z3) of line L over a box of states (theta, x, y, z)."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    th, x, y, z = (I.iv(lo[k], hi[k]) for k in range(4))
    c, sn = I.cos(th), I.sin(th)
    a = I.add(I.scale(c, runway.Lz), z)
    b = I.add(I.scale(c, runway.Lz + runway.rl), z)
    if a[0] <= 0 or b[0] <= 0:
        raise GeometryError("state box reaches non-positive runway depths")
    X = I.shift(x, runway.Lx)
    z1 = I.shift(I.scale(I.div(X, a), camera.fx), camera.u0)
    z2 = I.shift(I.scale(I.div(I.add(I.scale(sn, runway.Lz), y), a), -camera.fy), camera.v0)
    z3 = I.shift(I.scale(I.div(X, b), camera.fx), camera.u0)
    return (np.array([z1[0], z2[0], z3[0]], dtype=float),
            np.array([z1[1], z2[1], z3[1]], dtype=float))
