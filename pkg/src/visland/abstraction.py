"""Grid partition of the working zeta coordinates and the finite-state abstraction.

Cells are closed axis-aligned cubes of side ``side`` over (z1, z2, z3) of
line L.  The transition set of cell i is every cell meeting the infinity-norm
ball of radius beta + gamma(mu) + eta around the nominal successor of its
center, where beta uses the cell's radius vector and eta (the grid
quantisation slack) defaults to the cell radius.  Successor balls that leave
the grid, and centers with no valid state or successor, go to one extra
absorbing sink state.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DeltaFcBounds, DynamicsParams, step_array
from .network import evaluate


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    lower: tuple = (0.0, 0.0, 0.0)
    upper: tuple = (16.0, 16.0, 16.0)
    side: float = 1.0

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise PartitionError("lower and upper must be vectors of equal length")
        if not np.all(hi > lo) or not self.side > 0:
            raise PartitionError("need upper > lower and a positive cell side")
        n = (hi - lo) / self.side
        if not np.allclose(n, np.round(n), rtol=0, atol=1e-9):
            raise PartitionError(f"box width is not a whole number of cells: {n}")

    @property
    def radius(self):
        return 0.5 * self.side

    @property
    def dims(self):
        return len(self.lower)

    @property
    def shape(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        return tuple(int(v) for v in np.round((hi - lo) / self.side))


@dataclass(frozen=True)
class Region:
    index: int
    center: np.ndarray
    radius: float

    @property
    def lower(self):
        return self.center - self.radius

    @property
    def upper(self):
        return self.center + self.radius


@dataclass(frozen=True, eq=False)
class Partition:
    spec: PartitionSpec
    centers: np.ndarray

    def __len__(self):
        return len(self.centers)

    def regions(self):
        r = self.spec.radius
        return [Region(i, c, r) for i, c in enumerate(self.centers)]

    def region(self, i):
        return Region(i, self.centers[i], self.spec.radius)

    def cell_of(self, points):
        """Row-major cell index of each point, -1 outside the box.

        Points on a shared face go to the higher cell, except on the upper
        box face.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo = np.asarray(self.spec.lower, float)
        shape = np.asarray(self.spec.shape)
        finite = np.all(np.isfinite(p), axis=1)
        k = np.floor(np.where(finite[:, None], p - lo, -1.0) / self.spec.side).astype(np.int64)
        on_top = np.isclose(p, lo + shape * self.spec.side, rtol=0, atol=0)
        k = np.where(on_top, shape - 1, k)
        inside = np.all((k >= 0) & (k < shape), axis=1) & finite
        k = np.clip(k, 0, shape - 1)
        idx = np.ravel_multi_index(tuple(k.T), tuple(shape))
        return np.where(inside, idx, -1)

    def cells_meeting_box(self, lo, hi):
        """Indices of closed cells intersecting the closed box [lo, hi]; also
        whether the box sticks out of the grid."""
        lo_g = np.asarray(self.spec.lower, float)
        shape = np.asarray(self.spec.shape)
        s = self.spec.side
        kmin = np.ceil((np.asarray(lo) - lo_g) / s - 1.0).astype(np.int64)
        kmax = np.floor((np.asarray(hi) - lo_g) / s).astype(np.int64)
        outside = bool(np.any(kmin < 0) or np.any(kmax > shape - 1))
        kmin = np.maximum(kmin, 0)
        kmax = np.minimum(kmax, shape - 1)
        if np.any(kmax < kmin):
            return np.empty(0, dtype=np.int64), True
        axes = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
        grid = np.meshgrid(*axes, indexing="ij")
        idx = np.ravel_multi_index(tuple(g.ravel() for g in grid), tuple(shape))
        return np.sort(idx), outside


def partition(spec):
    lo = np.asarray(spec.lower, float)
    axes = [lo[d] + spec.side * (np.arange(n) + 0.5) for d, n in enumerate(spec.shape)]
    centers = np.array(list(itertools.product(*axes)), dtype=np.float64)
    return Partition(spec, centers)


def delta_zeta(radius, mu, tau, bounds=None, dims=3):
    """beta((r,..,r), tau) + gamma(mu, tau)."""
    bounds = bounds or DeltaFcBounds()
    return bounds.beta(np.full(dims, radius), tau) + bounds.gamma(mu, tau)


NORMAL, UNSAFE, SINK = "normal", "unsafe", "sink"


@dataclass(eq=False)
class Fsm:
    """Finite transition system over L regions plus a sink (index L)."""
    indptr: np.ndarray
    indices: np.ndarray
    unsafe: np.ndarray
    traversable: np.ndarray = None
    center_u: np.ndarray = None
    mu: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def num_states(self):
        return len(self.indptr) - 1

    @property
    def sink(self):
        return self.num_states - 1

    def successors(self, s):
        return self.indices[self.indptr[s]:self.indptr[s + 1]]

    def labels(self):
        out = [UNSAFE if u else NORMAL for u in self.unsafe]
        out[self.sink] = SINK
        return out

    def num_transitions(self):
        return int(self.indptr[-1])

    def adjacency(self):
        import scipy.sparse as sp
        n = self.num_states
        return sp.csr_matrix((np.ones(len(self.indices), dtype=bool), self.indices, self.indptr),
                             shape=(n, n))

    def with_unsafe(self, unsafe):
        return Fsm(self.indptr, self.indices, np.asarray(unsafe, bool), self.traversable,
                   self.center_u, self.mu, dict(self.meta))


def fsm_from_sets(succ_sets, unsafe=()):
    """Build an Fsm from explicit successor sets (the last state is the sink)."""
    indptr = [0]
    indices = []
    for s in succ_sets:
        indices += sorted(set(int(t) for t in s))
        indptr.append(len(indices))
    n = len(succ_sets)
    u = np.zeros(n, dtype=bool)
    u[list(unsafe)] = True
    return Fsm(np.asarray(indptr, np.int64), np.asarray(indices, np.int64), u)


@dataclass(frozen=True)
class CenterDynamics:
    """Per-center quantities that do not depend on mu."""
    states: np.ndarray
    controls: np.ndarray
    successors: np.ndarray
    traversable: np.ndarray


def center_dynamics(part, nn_aug, geometry, params):
    states, ok = geometry.working_to_states(part.centers)
    controls = np.full(len(part), np.nan)
    succ = np.full((len(part), 3), np.nan)
    if ok.any():
        zeta = geometry.full_zeta(states[ok])
        controls[ok] = evaluate(nn_aug, zeta)[:, 0]
        w, good = geometry.working_checked(step_array(states[ok], controls[ok], params))
        succ[ok] = w
        ok = ok.copy()
        ok[np.flatnonzero(ok)[~good]] = False
    return CenterDynamics(states, controls, succ, ok)


def build_fsm(part, nn_aug, mu, geometry, params=None, bounds=None, unsafe_cells=(),
              sink_is_unsafe=True, eta=None, centers=None, inflation=None):
    """Abstraction for one mu.

    ``centers`` may carry precomputed center dynamics.  ``inflation``
    replaces the ball radius delta_zeta + eta outright.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    params = params or DynamicsParams()
    bounds = bounds or DeltaFcBounds(params.Vg)
    cd = centers or center_dynamics(part, nn_aug, geometry, params)
    r = part.spec.radius
    eta = r if eta is None else eta
    if inflation is None:
        radius = delta_zeta(r, mu, params.tau, bounds, part.spec.dims) + eta
    else:
        radius = float(inflation)
    # widen slightly so floating ties always include both cells
    radius = radius * (1 + 1e-12) + 1e-12
    L = len(part)
    sink = L
    indptr = [0]
    indices = []
    for i in range(L):
        if not cd.traversable[i]:
            succ = [sink]
        else:
            c = cd.successors[i]
            cells, outside = part.cells_meeting_box(c - radius, c + radius)
            succ = list(cells) + ([sink] if outside else [])
        indices.extend(succ)
        indptr.append(len(indices))
    indices.append(sink)
    indptr.append(len(indices))
    unsafe = np.zeros(L + 1, dtype=bool)
    unsafe[list(unsafe_cells)] = True
    unsafe[sink] = bool(sink_is_unsafe)
    trav = np.append(cd.traversable, False)
    return Fsm(np.asarray(indptr, np.int64), np.asarray(indices, np.int64), unsafe, trav,
               np.append(cd.controls, np.nan), float(mu),
               {"ball_radius": float(radius), "eta": float(eta)})


@dataclass
class MonotonicityResult:
    ok: bool
    witness: int | None = None

    def __bool__(self):
        return self.ok


def transition_monotonicity_check(fsm_small, fsm_large):
    """True iff every successor set under the smaller mu is contained in the larger one's."""
    if fsm_small.num_states != fsm_large.num_states:
        raise ValueError("FSMs have different state counts")
    for s in range(fsm_small.num_states):
        if not np.all(np.isin(fsm_small.successors(s), fsm_large.successors(s))):
            return MonotonicityResult(False, s)
    return MonotonicityResult(True)


def one_step_containment(fsm, part, geometry, params, n_samples, rng):
    """Monte-Carlo soundness check of one abstraction step.

    Draws a traversable cell, a point in it with a valid state preimage and
    a control within mu of the center's control, steps the concrete system
    and checks that the cell reached (or the sink) is a successor in the
    FSM.  Returns (violations, samples used, first violating example).
    """
    trav = np.flatnonzero(fsm.traversable[:-1])
    if len(trav) == 0:
        return 0, 0, None
    violations, used, example = 0, 0, None
    r = part.spec.radius
    while used < n_samples:
        m = n_samples - used
        cells = rng.choice(trav, size=2 * m + 8)
        pts = part.centers[cells] + rng.uniform(-r, r, size=(len(cells), part.spec.dims))
        states, ok = geometry.working_to_states(pts)
        cells, states = cells[ok][:m], states[ok][:m]
        if len(cells) == 0:
            continue
        u = fsm.center_u[cells] + rng.uniform(-fsm.mu, fsm.mu, size=len(cells))
        w, good = geometry.working_checked(step_array(states, u, params))
        target = part.cell_of(w)
        target = np.where(good & (target >= 0), target, fsm.sink)
        for i, t, s0, uu in zip(cells, target, states, u):
            if t not in fsm.successors(i):
                violations += 1
                if example is None:
                    example = {"cell": int(i), "target": int(t), "state": s0.tolist(), "u": float(uu)}
        used += len(cells)
    return violations, used, example


# ---------------------------------------------------------------------------
# text format


def fsm_to_text(fsm):
    lines = ["# visland fsm v1",
             f"# mu {fsm.mu!r}",
             f"states {fsm.num_states}",
             f"sink {fsm.sink}",
             "unsafe " + " ".join(str(int(s)) for s in np.flatnonzero(fsm.unsafe))]
    if fsm.traversable is not None:
        lines.append("traversable " + " ".join(str(int(s)) for s in np.flatnonzero(fsm.traversable)))
    for s in range(fsm.num_states):
        lines.append(f"{s}: " + " ".join(str(int(t)) for t in fsm.successors(s)))
    return "\n".join(lines) + "\n"


def fsm_from_text(text):
    n = None
    unsafe, trav, succ = [], None, {}
    mu = 0.0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# mu"):
            mu = float(line.split()[2])
            continue
        if line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "states":
                n = int(rest)
            elif head == "sink":
                sink = int(rest)
            elif head == "unsafe":
                unsafe = [int(t) for t in rest.split()]
            elif head == "traversable":
                trav = [int(t) for t in rest.split()]
            elif head.endswith(":") or ":" in line:
                k, _, rhs = line.partition(":")
                succ[int(k)] = [int(t) for t in rhs.split()]
            else:
                raise ValueError(f"unknown record {head!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if n is None or len(succ) != n:
        raise ValueError("FSM text is missing states")
    if sink != n - 1:
        raise ValueError("the sink must be the last state")
    fsm = fsm_from_sets([succ[s] for s in range(n)], unsafe)
    fsm.mu = mu
    if trav is not None:
        t = np.zeros(n, dtype=bool)
        t[trav] = True
        fsm.traversable = t
    return fsm
