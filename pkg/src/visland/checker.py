"""Bounded model checking of the abstraction, the mu search and DIMACS export."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import bounded_bfs
from .abstraction import transition_monotonicity_check
from .enclosures import state_box_to_working_box

log = logging.getLogger(__name__)

INVARIANT, REACH = "invariant", "reach"
HOLDS, FAILS = "HOLDS", "FAILS"


class NoFeasibleMu(RuntimeError):
    def __init__(self, message, results=()):
        super().__init__(message)
        self.results = list(results)


class MonotonicityViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundedSpec:
    kind: str
    horizon: int
    initial: tuple
    unsafe: tuple = ()
    target: tuple = ()

    def __post_init__(self):
        if self.kind not in (INVARIANT, REACH):
            raise ValueError(f"unknown spec kind {self.kind!r}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not self.initial:
            raise ValueError("initial set is empty")

    def validate_for(self, n):
        for name in ("initial", "unsafe", "target"):
            ids = getattr(self, name)
            if any(not 0 <= int(s) < n for s in ids):
                raise ValueError(f"{name} ids out of range for {n} states")

    def goal(self, fsm):
        """Boolean mask of the states the search looks for."""
        m = np.zeros(fsm.num_states, dtype=bool)
        if self.kind == INVARIANT:
            m[list(self.unsafe)] = True
            m |= fsm.unsafe
        else:
            m[list(self.target)] = True
        return m


@dataclass
class CheckResult:
    status: str
    witness: list | None = None
    per_initial: dict = field(default_factory=dict)

    @property
    def holds(self):
        return self.status == HOLDS


def _path(parent, s):
    out = [int(s)]
    while parent[out[-1]] >= 0:
        out.append(int(parent[out[-1]]))
    return out[::-1]


def _init_mask(fsm, spec):
    m = np.zeros(fsm.num_states, dtype=bool)
    m[list(spec.initial)] = True
    return m


def check_bounded_safety(fsm, spec):
    """HOLDS iff no path of at most T steps from the initial set hits an unsafe state."""
    if spec.kind != INVARIANT:
        raise ValueError("check_bounded_safety needs an invariant spec")
    spec.validate_for(fsm.num_states)
    dist, parent = bounded_bfs(fsm.indptr, fsm.indices, _init_mask(fsm, spec), spec.horizon)
    hit = np.flatnonzero(spec.goal(fsm) & (dist >= 0))
    if len(hit) == 0:
        return CheckResult(HOLDS)
    s = hit[np.argmin(dist[hit])]
    return CheckResult(FAILS, _path(parent, s))


def reverse_adjacency(fsm):
    adj = fsm.adjacency().T.tocsr()
    adj.sort_indices()
    return adj.indptr.astype(np.int64), adj.indices.astype(np.int64)


def check_bounded_reach(fsm, spec):
    """Existential bounded reach, decided for every initial state separately.

    HOLDS iff each initial state has some path of at most T steps into the
    target set.  ``per_initial`` maps each initial state to its witness path
    (None when it cannot reach the target).
    """
    if spec.kind != REACH:
        raise ValueError("check_bounded_reach needs a reach spec")
    spec.validate_for(fsm.num_states)
    indptr, indices = reverse_adjacency(fsm)
    # backward search from the target: parent is the next state on a shortest path
    dist, nxt = bounded_bfs(indptr, indices, spec.goal(fsm), spec.horizon)
    per = {}
    for s in spec.initial:
        per[int(s)] = _path(nxt, s)[::-1] if dist[s] >= 0 else None
    ok = all(p is not None for p in per.values())
    first = per[int(spec.initial[0])] if ok else None
    return CheckResult(HOLDS if ok else FAILS, first, per)


def check(fsm, spec):
    return check_bounded_safety(fsm, spec) if spec.kind == INVARIANT else check_bounded_reach(fsm, spec)


def validate_path(fsm, path, spec):
    """True iff ``path`` starts in the initial set, follows transitions and has at most T steps."""
    if not path or path[0] not in spec.initial or len(path) - 1 > spec.horizon:
        return False
    return all(b in fsm.successors(a) for a, b in zip(path, path[1:]))


@dataclass
class MuResult:
    mu: float
    result: CheckResult
    transitions: int
    seconds: float = 0.0


@dataclass
class MuSearchResult:
    mu_max: float
    results: list


def mu_search(mu_values, spec, build, exhaustive=False):
    """Largest mu in the ascending list whose abstraction satisfies ``spec``.

    ``build(mu)`` returns the Fsm for that mu.  Consecutive abstractions are
    checked for transition monotonicity, which is what makes the passing
    mu values a prefix of the list.  The search stops at the first failure
    unless ``exhaustive`` is set, in which case every mu is checked and the
    prefix structure is asserted.
    """
    mus = [float(m) for m in mu_values]
    if not mus:
        raise ValueError("empty mu list")
    if any(b <= a for a, b in zip(mus, mus[1:])) or mus[0] < 0:
        raise ValueError("mu list must be non-negative and strictly ascending")
    results, prev = [], None
    mu_max = None
    failed = False
    for mu in mus:
        t0 = time.perf_counter()
        fsm = build(mu)
        if prev is not None and not transition_monotonicity_check(prev, fsm):
            raise MonotonicityViolation(f"transitions shrink between mu={results[-1].mu} and {mu}")
        res = check(fsm, spec)
        results.append(MuResult(mu, res, fsm.num_transitions(), time.perf_counter() - t0))
        log.info("mu=%g %s (%d transitions)", mu, res.status, fsm.num_transitions())
        prev = fsm
        if res.holds:
            if failed:
                raise MonotonicityViolation(f"mu={mu} passes after a smaller mu failed")
            mu_max = mu
        else:
            failed = True
            if not exhaustive:
                break
    if mu_max is None:
        raise NoFeasibleMu(f"the specification fails already at mu={mus[0]}", results)
    return MuSearchResult(mu_max, results)


# ---------------------------------------------------------------------------
# unsafe / target sets


def cells_from_state_box(part, geometry, center, halfwidths):
    """Cells meeting the working-coordinate image of a state box.

    ``center`` and ``halfwidths`` are (theta, x, y, z) vectors.
    """
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(halfwidths, dtype=np.float64)
    lo, hi = state_box_to_working_box(c - h, c + h, geometry.runway, geometry.camera)
    cells, _ = part.cells_meeting_box(lo, hi)
    return [int(i) for i in cells]


# ---------------------------------------------------------------------------
# DIMACS


def _amo(vars_, next_var):
    """At-most-one clauses: pairwise for small sets, sequential counter otherwise."""
    n = len(vars_)
    if n <= 1:
        return [], next_var
    if n <= 16:
        return [[-a, -b] for i, a in enumerate(vars_) for b in vars_[i + 1:]], next_var
    aux = list(range(next_var, next_var + n - 1))
    cl = [[-vars_[0], aux[0]]]
    for i in range(1, n - 1):
        cl += [[-vars_[i], aux[i]], [-aux[i - 1], aux[i]], [-vars_[i], -aux[i - 1]]]
    cl.append([-vars_[-1], -aux[-1]])
    return cl, next_var + n - 1


def export_cnf(fsm, spec):
    """DIMACS CNF, satisfiable iff a path of at most T steps reaches the goal set.

    Variable x(s, t) = t * N + s + 1 means "the path is in state s at step t".
    Each frame holds exactly one state; goal states may stutter so that
    paths reaching the goal early are padded to length T.
    """
    spec.validate_for(fsm.num_states)
    N, T = fsm.num_states, spec.horizon
    goal = spec.goal(fsm)

    def x(s, t):
        return t * N + s + 1

    clauses = [[x(s, 0) for s in spec.initial]]
    init = set(int(s) for s in spec.initial)
    clauses += [[-x(s, 0)] for s in range(N) if s not in init]
    next_var = N * (T + 1) + 1
    for t in range(T + 1):
        frame = [x(s, t) for s in range(N)]
        clauses.append(frame)
        amo, next_var = _amo(frame, next_var)
        clauses += amo
    for t in range(T):
        for s in range(N):
            succ = set(int(v) for v in fsm.successors(s))
            if goal[s]:
                succ.add(s)
            clauses.append([-x(s, t)] + [x(v, t + 1) for v in sorted(succ)])
    clauses.append([x(s, T) for s in np.flatnonzero(goal)])
    header = [
        "c visland bounded path query",
        f"c kind {spec.kind} horizon {T} states {N}",
        "c variable x(s,t) = t*N + s + 1 for state s in 0..N-1 and step t in 0..T",
        f"c variables above {N * (T + 1)} are at-most-one auxiliaries",
        "c goal states stutter; a model is a path reaching the goal within T steps",
        f"p cnf {next_var - 1} {len(clauses)}",
    ]
    body = [" ".join(str(v) for v in c) + " 0" for c in clauses]
    return "\n".join(header + body) + "\n"


def decode_cnf_model(model, num_states, horizon):
    """Path from a solver model (list of signed literals)."""
    true = set(v for v in model if v > 0)
    path = []
    for t in range(horizon + 1):
        path.append(next(s for s in range(num_states) if t * num_states + s + 1 in true))
    return path
