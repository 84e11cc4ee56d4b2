"""Hand-weighted ReLU network that reproduces the runway rasterizer.

For every pixel and every runway line, a gadget computes the four
orientation values of the segment against each pixel edge (affine in zeta,
because z5 is an input), tests both sign pairs for a strict mismatch with
m(a, b) = |a+b| - |a| - |b|, takes max(m12, m34) per edge and the minimum
over the four edges.  The result v is negative exactly when the segment
strictly crosses the pixel boundary.  A clamp stage turns v into a value in
[0, 1] for the controller.

Per pixel and line the gadget uses 48 + 12 + 6 + 2 = 68 ReLUs:

* 48: |S|, |a|, |b| for the two orientation pairs of each of the four edges,
  each absolute value as ReLU(t) + ReLU(-t);
* 12: per-edge max(m12, m34) = (m12+m34)/2 + |m12-m34|/2.  Both inputs are
  non-positive so the sum is carried by the single unit ReLU(-(m12+m34));
* 6: first level of the min tree, min(a, b) = (a+b)/2 - |a-b|/2, again with
  one unit carrying -(a+b) >= 0;
* 2: the root min of two non-positive values A, B written as
  -(ReLU(B - A) + ReLU(-B)), which equals the same identity.

The clamp stage adds two more ReLU layers per pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .network import IDENTITY, RELU, Layer, LayeredReluNetwork, compose, evaluate, stack_parallel

GADGET_RELUS = 68


@dataclass(frozen=True)
class PixelEdge:
    ax: float
    ay: float
    bx: float
    by: float

    def __post_init__(self):
        if (self.ax, self.ay) == (self.bx, self.by):
            raise ValueError("edge endpoints coincide")


@dataclass(frozen=True)
class PerceptionBuildSpec:
    q: int = 16
    lines: int = 2
    k: float = 1e3
    delta_deg: float = 1e-9

    def __post_init__(self):
        if self.q < 2 or self.lines not in (1, 2) or not self.k > 0 or self.delta_deg < 0:
            raise ValueError(f"invalid perception build spec {self}")


def pixel_edges(i, j):
    """Edges AB, BC, CD, DA of pixel (i, j) (1-based), square [i-1, i] x [j-1, j]."""
    a, b, c, d = (i - 1, j - 1), (i, j - 1), (i, j), (i - 1, j)
    return [PixelEdge(*p, *r) for p, r in ((a, b), (b, c), (c, d), (d, a))]


def _o_rows(edge):
    """Coefficient rows [w1..w5, bias] of O1..O4 as affine functions of zeta."""
    ax, ay, bx, by = edge.ax, edge.ay, edge.bx, edge.by
    cross = ax * by - ay * bx
    return np.array([
        [ay - by, bx - ax, 0.0, 0.0, 0.0, cross],
        [0.0, 0.0, ay - by, bx - ax, 0.0, cross],
        [-ay, ax, ay, -ax, 1.0, 0.0],
        [-by, bx, by, -bx, 1.0, 0.0],
    ])


def edge_o_values(zeta, edge):
    z = zeta.as_array() if hasattr(zeta, "as_array") else np.asarray(zeta, dtype=float)
    rows = _o_rows(edge)
    return tuple(float(v) for v in rows[:, :5] @ z[:5] + rows[:, 5])


# ---------------------------------------------------------------------------
# small gadgets


def _net(*layers):
    return LayeredReluNetwork(tuple(Layer(np.atleast_2d(w), b, act) for w, b, act in layers))


def build_abs_gadget():
    return _net(([[1.0], [-1.0]], [0.0, 0.0], RELU),
                ([[1.0, 1.0]], [0.0], IDENTITY))


def build_sign_mismatch_gadget():
    """(a, b) -> |a+b| - |a| - |b|: zero for equal signs or a zero, negative otherwise."""
    w1 = [[1, 1], [-1, -1], [1, 0], [-1, 0], [0, 1], [0, -1]]
    return _net((w1, np.zeros(6), RELU),
                ([[1, 1, -1, -1, -1, -1]], [0.0], IDENTITY))


def _minmax(sign):
    w1 = [[1, 1], [-1, -1], [1, -1], [-1, 1]]
    return _net((w1, np.zeros(4), RELU),
                ([[0.5, -0.5, sign * 0.5, sign * 0.5]], [0.0], IDENTITY))


def build_min_gadget():
    """min(a, b) = (a+b)/2 - |a-b|/2."""
    return _minmax(-1.0)


def build_max_gadget():
    return _minmax(1.0)


def build_binarization_stage(k):
    """v -> clamp(-k v, 0, 1).

    Written as 1 - ReLU(1 - ReLU(-k v)) rather than ReLU(-k v) - ReLU(-k v - 1):
    the same function, but interval bounds of the nested form never leave
    [0, 1], while the difference form widens them by a factor k.
    """
    return _net(([[-k]], [0.0], RELU),
                ([[-1.0]], [1.0], RELU),
                ([[-1.0]], [1.0], IDENTITY))


def _nonpositive_min_gadget():
    # min of two values known to be <= 0; three units, sum carried by ReLU(-(a+b))
    return _net(([[-1, -1], [1, -1], [-1, 1]], np.zeros(3), RELU),
                ([[-0.5, -0.5, -0.5]], [0.0], IDENTITY))


# ---------------------------------------------------------------------------
# pixel gadget


def _pixel_gadget_layers(i, j):
    edges = pixel_edges(i, j)
    # layer 1: for each edge and each pair (O1,O2), (O3,O4): +-(a+b), +-a, +-b
    w1, b1 = [], []
    for edge in edges:
        o = _o_rows(edge)
        for a, b in ((o[0], o[1]), (o[2], o[3])):
            for row in (a + b, a, b):
                w1 += [row[:5], -row[:5]]
                b1 += [row[5], -row[5]]
    w1, b1 = np.array(w1), np.array(b1)

    # m for pair p of edge e as a combination of the 48 layer-1 units
    def m_vec(e, p):
        v = np.zeros(48)
        base = 12 * e + 6 * p
        v[base:base + 6] = [1, 1, -1, -1, -1, -1]
        return v

    # layer 2: per edge, ReLU(-(m12+m34)), ReLU(m12-m34), ReLU(m34-m12)
    w2 = []
    for e in range(4):
        m12, m34 = m_vec(e, 0), m_vec(e, 1)
        w2 += [-(m12 + m34), m12 - m34, m34 - m12]
    w2 = np.array(w2)
    # edge value e_k = max(m12, m34) as a combination of layer-2 units
    e_vec = []
    for e in range(4):
        v = np.zeros(12)
        v[3 * e:3 * e + 3] = [-0.5, 0.5, 0.5]
        e_vec.append(v)

    # layer 3: min(e1, e2) and min(e3, e4)
    w3 = []
    for x, y in ((e_vec[0], e_vec[1]), (e_vec[2], e_vec[3])):
        w3 += [-(x + y), x - y, y - x]
    w3 = np.array(w3)
    A = np.array([-0.5, -0.5, -0.5, 0, 0, 0])
    B = np.array([0, 0, 0, -0.5, -0.5, -0.5])

    # layer 4: root min as -(ReLU(B - A) + ReLU(-B))
    w4 = np.array([B - A, -B])
    return [(w1, b1, RELU), (w2, np.zeros(12), RELU), (w3, np.zeros(6), RELU),
            (w4, np.zeros(2), RELU), (np.array([[-1.0, -1.0]]), np.zeros(1), IDENTITY)]


def build_pixel_gadget(pixel):
    """5-input, 1-output gadget for pixel (i, j); output < 0 iff a strict edge crossing."""
    i, j = pixel
    return _net(*_pixel_gadget_layers(i, j))


# ---------------------------------------------------------------------------
# full perception network


def _fanout(lines, copies_per_line):
    # identity layer copying each line's 5 inputs once per pixel, pixel-major
    rows, cols = [], []
    r = 0
    for p in range(copies_per_line):
        for line in range(lines):
            for c in range(5):
                rows.append(r)
                cols.append(5 * line + c)
                r += 1
    w = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(r, 5 * lines))
    return LayeredReluNetwork((Layer(w, np.zeros(r), IDENTITY),))


def stage_names(spec):
    """Stage label of each layer of the assembled network."""
    names = ["gadget"] * 4
    if spec.lines == 2:
        names.append("line_combine")
    names += ["binarization", "binarization", "output"]
    return names


def assemble_perception_network(spec, cam=None):
    """Build NN_C: zeta (5*lines) -> q*q clamped pixel values, pixel-major order."""
    if cam is not None and cam.q != spec.q:
        raise ValueError(f"camera has q={cam.q} but build spec has q={spec.q}")
    q = spec.q
    gadgets = [build_pixel_gadget((i, j))
               for i in range(1, q + 1) for j in range(1, q + 1) for _ in range(spec.lines)]
    net = compose(_fanout(spec.lines, q * q), stack_parallel(gadgets, sparse=True), fuse=True)
    if spec.lines == 2:
        combine = stack_parallel([_nonpositive_min_gadget()] * (q * q), sparse=True)
        net = compose(net, combine, fuse=True)
    binar = stack_parallel([build_binarization_stage(spec.k)] * (q * q), sparse=True)
    return compose(net, binar, fuse=True)


def build_manifest(net, spec):
    stages = {}
    for name, layer in zip(stage_names(spec), net.layers):
        if layer.is_relu:
            stages[name] = stages.get(name, 0) + layer.out_dim
    return {
        "q": spec.q,
        "lines": spec.lines,
        "k": spec.k,
        "delta_deg": spec.delta_deg,
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layer_widths": net.widths(),
        "relu_per_stage": stages,
        "gadget_relus_expected": GADGET_RELUS * spec.q * spec.q * spec.lines,
    }


def gadget_values(net, spec, zeta):
    """Raw per-pixel crossing values v (before the clamp stage), shape (n, q*q)."""
    x = np.atleast_2d(np.asarray(zeta, dtype=np.float64))
    n_pre = len(stage_names(spec)) - 3
    for layer in net.layers[:n_pre]:
        x = layer.affine(x)
        if layer.is_relu:
            x = np.maximum(x, 0.0)
    # the first clamp layer is ReLU(-k v); recover v from its affine part
    return net.layers[n_pre].affine(x) / -spec.k


def threshold_image(outputs, spec):
    """Binary pixels from clamp outputs: lit iff -k v exceeds k * delta_deg / 2."""
    return np.asarray(outputs) > 0.5 * spec.k * spec.delta_deg


def evaluate_in_chunks(net, x, chunk=512):
    x = np.atleast_2d(x)
    return np.vstack([evaluate(net, x[s:s + chunk]) for s in range(0, len(x), chunk)])


def build_augmented_network(perception, controller, fuse=False):
    if perception.output_dim != controller.input_dim:
        raise ValueError(
            f"perception emits {perception.output_dim} values, controller expects "
            f"{controller.input_dim}")
    return compose(perception, controller, fuse=fuse)
