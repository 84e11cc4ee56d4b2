"""Per-region robustness verification of the closed-loop network.

A region is proved when every concrete input it stands for produces an
output inside the infinity-norm envelope of radius mu around the control
at the region's center.  Bounds come from interval propagation in
center/radius form with a floating-point slack term; a best-first
branch-and-bound splits the domain box when bounds are too loose.
Counterexamples are only reported for concrete, re-evaluated points.
"""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .enclosures import VacuousRegion, working_box_to_input_box
from .geometry import DegenerateInverse, GeometryError
from .network import evaluate

PROVED, VIOLATED, UNKNOWN, SKIPPED = "PROVED", "VIOLATED", "UNKNOWN", "SKIPPED"
SAFE, UNSAFE_ENVELOPE, AGG_UNKNOWN, NO_FEASIBLE_MU = "SAFE", "UNSAFE-ENVELOPE", "UNKNOWN", "NO-FEASIBLE-MU"

_U = np.finfo(np.float64).eps / 2


@dataclass(frozen=True)
class Envelope:
    center: np.ndarray
    radius: float

    def violation(self, y):
        """max_k |y_k - c_k| - radius, per row."""
        y = np.atleast_2d(y)
        return np.max(np.abs(y - self.center), axis=1) - self.radius

    def excess(self, lo, hi):
        """How far interval outputs may leave the envelope (<= 0 means inside)."""
        return np.max(np.maximum(hi - self.center, self.center - lo), axis=-1) - self.radius


def _gamma(n):
    nu = n * _U
    return nu / (1 - nu)


def interval_bounds(net, lo, hi):
    """Sound output bounds of ``net`` over boxes [lo, hi] (vectors or batches)."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    single = lo.ndim == 1
    lo, hi = np.atleast_2d(lo), np.atleast_2d(hi)
    for layer in net.layers:
        c = 0.5 * (lo + hi)
        r = np.maximum(hi - c, c - lo)
        r = np.nextafter(r, np.inf)
        aw = layer.abs_weight
        mid = layer.affine(c)
        rad = np.asarray(aw @ r.T).T
        mag = np.asarray(aw @ np.abs(c).T).T + np.abs(layer.bias)
        g = _gamma(layer.in_dim + 2)
        slack = g * (mag + rad) + np.finfo(np.float64).tiny
        rad = rad + slack
        lo, hi = mid - rad, mid + rad
        if layer.is_relu:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return (lo[0], hi[0]) if single else (lo, hi)


@dataclass
class Verdict:
    status: str
    splits: int = 0
    witness: dict | None = None
    bound: float | None = None
    note: str = ""


@dataclass
class RegionReport:
    region_id: int
    center: np.ndarray
    verdict: Verdict
    millis: float = 0.0

    @property
    def status(self):
        return self.verdict.status


@dataclass
class Domain:
    """How a domain box becomes network inputs.

    ``lift(lo, hi)`` returns an input box enclosing every concrete input of
    the domain box, and ``concrete(points)`` maps domain points to
    (inputs, ok mask).  The identity domain verifies a plain input box.
    """
    lift: object = None
    concrete: object = None

    def lift_box(self, lo, hi):
        return (lo, hi) if self.lift is None else self.lift(lo, hi)

    def inputs(self, pts):
        if self.concrete is None:
            return pts, np.ones(len(pts), dtype=bool)
        return self.concrete(pts)


def region_domain(geometry):
    def concrete(pts):
        states, ok = geometry.working_to_states(pts)
        x = np.zeros((len(pts), geometry.input_dim))
        if ok.any():
            # a feasible working point can still miss line R's depths, never in practice
            x[ok] = geometry.full_zeta(states[ok])
        return x, ok
    return Domain(lambda lo, hi: working_box_to_input_box(lo, hi, geometry), concrete)


def region_to_input_box(lo, hi, geometry):
    """Interval enclosure of the full network input over a working-coordinate cell."""
    return working_box_to_input_box(lo, hi, geometry)


def _witness_search(net, env, lo, hi, domain, rng, samples):
    d = len(lo)
    corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
    pts = np.vstack([0.5 * (lo + hi), corners, lo + rng.uniform(size=(samples, d)) * (hi - lo)])
    x, ok = domain.inputs(pts)
    if not ok.any():
        return None
    pts, x = pts[ok], x[ok]
    y = evaluate(net, x)
    v = env.violation(y)
    best = int(np.argmax(v))
    # coordinate search from the worst sample
    p, val, step = pts[best].copy(), v[best], 0.25 * (hi - lo)
    for _ in range(12):
        if val > 0:
            break
        cand = []
        for k in range(d):
            for s in (-1, 1):
                q = p.copy()
                q[k] = np.clip(q[k] + s * step[k], lo[k], hi[k])
                cand.append(q)
        cand = np.array(cand)
        xc, okc = domain.inputs(cand)
        if okc.any():
            vc = env.violation(evaluate(net, xc[okc]))
            j = int(np.argmax(vc))
            if vc[j] > val:
                p, val = cand[okc][j], vc[j]
                continue
        step = step / 2
    if val > 0:
        xi, _ = domain.inputs(p[None, :])
        return {"point": p.tolist(), "input": xi[0].tolist(),
                "output": evaluate(net, xi[0]).tolist(), "excess": float(val)}
    return None


def verify_region(net, lo, hi, envelope, budget=10_000, domain=None, seed=0,
                  witness_samples=64, min_width=1e-9, batch=32):
    """PROVED / VIOLATED / UNKNOWN for one domain box.

    ``budget`` caps the number of box splits.  VIOLATED always carries a
    concrete input whose re-evaluated output leaves the envelope.
    """
    if budget <= 0:
        raise ValueError(f"split budget must be positive, got {budget}")
    domain = domain or Domain()
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    rng = np.random.default_rng(seed)
    w = _witness_search(net, envelope, lo, hi, domain, rng, witness_samples)
    if w is not None:
        return Verdict(VIOLATED, 0, w)
    root_w = np.where(hi > lo, hi - lo, 1.0)
    # split score: width times first-layer sensitivity on a plain input box;
    # width relative to the root box when the domain is lifted
    sens = 1.0 / root_w
    if domain.lift is None:
        sens = np.asarray(net.layers[0].abs_weight.sum(axis=0)).ravel() + 1e-12
    tie = itertools.count()
    heap = [(-np.inf, next(tie), lo, hi)]
    splits, worst = 0, -np.inf
    while heap:
        items = [heapq.heappop(heap) for _ in range(min(batch, len(heap)))]
        boxes, ilo, ihi = [], [], []
        pending = []
        for _, _, blo, bhi in items:
            try:
                a, b = domain.lift_box(blo, bhi)
            except VacuousRegion:
                continue
            except GeometryError:
                pending.append((np.inf, blo, bhi))
                continue
            boxes.append((blo, bhi))
            ilo.append(a)
            ihi.append(b)
        if boxes:
            olo, ohi = interval_bounds(net, np.array(ilo), np.array(ihi))
            ex = envelope.excess(olo, ohi)
            for (blo, bhi), e in zip(boxes, ex):
                if e > 0:
                    pending.append((e, blo, bhi))
                else:
                    worst = max(worst, e)
        for e, blo, bhi in pending:
            if splits >= budget:
                return Verdict(UNKNOWN, splits, None, float(e), "split budget exhausted")
            k = int(np.argmax((bhi - blo) * sens))
            if bhi[k] - blo[k] <= min_width:
                return Verdict(UNKNOWN, splits, None, float(e), "box too small to split")
            m = 0.5 * (blo[k] + bhi[k])
            left_hi, right_lo = bhi.copy(), blo.copy()
            left_hi[k] = m
            right_lo[k] = m
            # look for a concrete violation at the split point before refining
            probe = 0.5 * (blo + bhi)
            x, ok = domain.inputs(probe[None, :])
            if ok[0]:
                y = evaluate(net, x[0])
                v = float(envelope.violation(y)[0])
                if v > 0:
                    return Verdict(VIOLATED, splits, {"point": probe.tolist(), "input": x[0].tolist(),
                                                      "output": y.tolist(), "excess": v})
            splits += 1
            heapq.heappush(heap, (-e, next(tie), blo, left_hi))
            heapq.heappush(heap, (-e, next(tie), right_lo, bhi))
    return Verdict(PROVED, splits, None, float(worst) if np.isfinite(worst) else None)


def verify_cell(net, region, u_center, mu, geometry, budget=10_000, seed=0):
    """Verify one partition cell against the envelope around its center control."""
    env = Envelope(np.atleast_1d(np.asarray(u_center, dtype=np.float64)), float(mu))
    return verify_region(net, region.lower, region.upper, env, budget,
                         region_domain(geometry), seed=seed + int(region.index))


def batch_verify(net, regions, center_controls, mu, geometry, budget=10_000, seed=0,
                 skip=None):
    """Independent verdicts per region, ordered by region id.

    ``skip`` marks regions that have no concrete state with a valid
    successor; they are sent to the sink by the abstraction and reported as
    SKIPPED.
    """
    out = []
    for reg in sorted(regions, key=lambda r: r.index):
        t0 = time.perf_counter()
        if skip is not None and skip[reg.index]:
            v = Verdict(SKIPPED, note="untraversable, routed to sink")
        else:
            u = center_controls[reg.index]
            try:
                v = verify_cell(net, reg, u, mu, geometry, budget, seed)
            except DegenerateInverse as exc:
                v = Verdict(UNKNOWN, note=str(exc))
        out.append(RegionReport(reg.index, reg.center, v, 1e3 * (time.perf_counter() - t0)))
    return out


def aggregate(reports):
    """SAFE iff every verified region is PROVED; first VIOLATED region otherwise."""
    checked = [r for r in reports if r.status != SKIPPED]
    bad = [r for r in checked if r.status == VIOLATED]
    if bad:
        return UNSAFE_ENVELOPE, bad[0].region_id
    if any(r.status != PROVED for r in checked):
        return AGG_UNKNOWN, None
    return SAFE, None


def post_hoc_check(net, region, u_center, mu, geometry, n, rng):
    """Largest envelope violation over ``n`` random concrete points of a region."""
    pts = region.lower + rng.uniform(size=(n, len(region.center))) * (region.upper - region.lower)
    x, ok = region_domain(geometry).inputs(pts)
    if not ok.any():
        return -np.inf, 0
    env = Envelope(np.atleast_1d(u_center), mu)
    return float(np.max(env.violation(evaluate(net, x[ok])))), int(ok.sum())


# ---------------------------------------------------------------------------
# VNN-LIB style property export


def to_vnnlib(lo, hi, envelope, comment=""):
    """Property text asserting a counterexample: input in box, output outside envelope."""
    lines = [f"; {comment}" if comment else "; visland region property"]
    n, m = len(lo), len(envelope.center)
    lines += [f"(declare-const X_{i} Real)" for i in range(n)]
    lines += [f"(declare-const Y_{k} Real)" for k in range(m)]
    for i in range(n):
        lines.append(f"(assert (>= X_{i} {float(lo[i])!r}))")
        lines.append(f"(assert (<= X_{i} {float(hi[i])!r}))")
    terms = []
    for k in range(m):
        c = float(envelope.center[k])
        terms.append(f"(and (>= Y_{k} {c + envelope.radius!r}))")
        terms.append(f"(and (<= Y_{k} {c - envelope.radius!r}))")
    lines.append("(assert (or " + " ".join(terms) + "))")
    return "\n".join(lines) + "\n"
