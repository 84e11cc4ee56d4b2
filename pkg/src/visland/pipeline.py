"""End-to-end run: partition, controller, perception, composition, mu search,
region verification, closed-loop simulation and reports.

Every stage's artifact is cached under ``<output dir>/cache`` with a key
derived from the configuration pieces it depends on, so subcommands can
pick up where a previous run stopped.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import time
from functools import cached_property

import numpy as np

from . import checker as C
from .abstraction import (Partition, PartitionSpec, build_fsm, center_dynamics, fsm_from_text,
                          fsm_to_text, partition)
from .config import canonical, digest
from .dynamics import DeltaFcBounds, DynamicsParams, step_array
from .geometry import CameraIntrinsics, Geometry, RunwaySpec, StateDomain
from .network import IDENTITY, RELU, Layer, LayeredReluNetwork, evaluate, load_weights, save_weights
from .perception import (PerceptionBuildSpec, assemble_perception_network, build_augmented_network,
                         evaluate_in_chunks)
from .training import TeacherParams, TrainSpec, teacher_agreement, train_controller_bc
from .verifier import (AGG_UNKNOWN, NO_FEASIBLE_MU, PROVED, SAFE, SKIPPED, UNKNOWN, VIOLATED,
                       aggregate, batch_verify)

log = logging.getLogger(__name__)

EXIT_CODES = {SAFE: 0, "UNSAFE-ENVELOPE": 2, AGG_UNKNOWN: 3, NO_FEASIBLE_MU: 4, "ERROR": 1}
TIMING_KEYS = ("seconds", "millis", "timing")
STATE_KEYS = ("theta", "x", "y", "z")


def _state_vec(d, default=0.0):
    return np.array([float(d.get(k, default)) for k in STATE_KEYS])


def constant_controller(q, value):
    return LayeredReluNetwork((Layer(np.zeros((1, q * q)), [0.0], RELU),
                               Layer(np.zeros((1, 1)), [float(value)], IDENTITY)))


class Context:
    """Lazily built, disk-cached stage artifacts for one configuration."""

    def __init__(self, cfg, out_dir=None, use_cache=True):
        self.cfg = cfg
        self.out_dir = out_dir or cfg["output"]["dir"]
        self.cache_dir = os.path.join(self.out_dir, "cache")
        self.use_cache = use_cache
        self.timing = {}
        self._fsms = {}

    # -- scenario ---------------------------------------------------------
    @cached_property
    def geometry(self):
        sc = self.cfg["scenario"]
        g = sc["geometry"]
        return Geometry(RunwaySpec(**sc["runway"]), CameraIntrinsics(**sc["camera"]),
                        g["x_offset"], g["pitch_sign"], tuple(g["lines"]))

    @cached_property
    def params(self):
        return DynamicsParams(**self.cfg["scenario"]["dynamics"])

    @cached_property
    def bounds(self):
        return DeltaFcBounds(self.params.Vg)

    @cached_property
    def domain(self):
        d = self.cfg["scenario"]["domain"]
        x = self.cfg["scenario"]["geometry"]["x_offset"]
        return StateDomain(tuple(d["theta"]), tuple(d["y"]), tuple(d["z"]), (x, x), d["max_slope"])

    @cached_property
    def perception_spec(self):
        p = self.cfg["perception"]
        return PerceptionBuildSpec(self.geometry.q, len(self.geometry.lines), p["k"], p["delta_deg"])

    @cached_property
    def partition(self) -> Partition:
        p = self.cfg["partition"]
        return partition(PartitionSpec(tuple(p["lower"]), tuple(p["upper"]), p["side"]))

    # -- cache helpers ----------------------------------------------------
    def _path(self, name):
        os.makedirs(self.cache_dir, exist_ok=True)
        return os.path.join(self.cache_dir, name)

    def _timed(self, stage, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timing[stage] = self.timing.get(stage, 0.0) + time.perf_counter() - t0
        return out

    def _cached_net(self, name, key, build):
        path = self._path(f"{name}-{key}.net")
        if self.use_cache and os.path.exists(path):
            return load_weights(path)
        net = build()
        save_weights(net, path)
        return net

    # -- networks ---------------------------------------------------------
    def _scenario_key(self):
        return digest(self.cfg["scenario"])

    @cached_property
    def controller_key(self):
        c = self.cfg["controller"]
        if c["source"] == "weights":
            with open(c["path"], "rb") as fh:
                import hashlib
                return "w" + hashlib.sha256(fh.read()).hexdigest()[:15]
        if c["source"] == "constant":
            return digest("constant", self.geometry.q, c["value"])
        return digest(self.cfg["scenario"], c["train"], c["teacher"], self.cfg["seed"])

    @cached_property
    def controller(self):
        c = self.cfg["controller"]
        if c["source"] == "weights":
            net = load_weights(c["path"])
        elif c["source"] == "constant":
            net = constant_controller(self.geometry.q, c["value"])
        else:
            t = c["train"]
            spec = TrainSpec(tuple(t["hidden"]), t["samples"], t["epochs"], t["batch"], t["lr"],
                             t["weight_decay"], self.cfg["seed"])
            net = self._timed("train", lambda: self._cached_net(
                "controller", self.controller_key,
                lambda: train_controller_bc(self.geometry, self.domain, spec, self.teacher)))
        q = self.geometry.q
        if net.input_dim != q * q or net.output_dim < 1:
            raise ValueError(f"controller expects {net.input_dim} inputs, images have {q * q} pixels")
        return net

    @cached_property
    def teacher(self):
        return TeacherParams(**self.cfg["controller"]["teacher"])

    @cached_property
    def perception_key(self):
        s = self.perception_spec
        return digest("perception", s.q, s.lines, s.k, s.delta_deg)

    @cached_property
    def perception(self):
        return self._timed("perception", lambda: self._cached_net(
            "perception", self.perception_key,
            lambda: assemble_perception_network(self.perception_spec, self.geometry.camera)))

    @cached_property
    def aug_key(self):
        return digest(self.perception_key, self.controller_key)

    @cached_property
    def aug(self):
        return self._timed("compose", lambda: build_augmented_network(self.perception, self.controller,
                                                                      fuse=True))

    # -- abstraction ------------------------------------------------------
    @cached_property
    def abstraction_key(self):
        return digest(self.aug_key, self.cfg["scenario"], self.cfg["partition"])

    @cached_property
    def centers(self):
        path = self._path(f"centers-{self.abstraction_key}.npz")
        if self.use_cache and os.path.exists(path):
            from .abstraction import CenterDynamics
            with np.load(path) as z:
                return CenterDynamics(z["states"], z["controls"], z["successors"], z["traversable"])

        def build():
            cd = center_dynamics(self.partition, self.aug, self.geometry, self.params)
            np.savez(path, states=cd.states, controls=cd.controls, successors=cd.successors,
                     traversable=cd.traversable)
            return cd
        return self._timed("centers", build)

    @cached_property
    def unsafe_cells(self):
        s = self.cfg["spec"]
        if s["kind"] != "invariant":
            return []
        c = _state_vec(s["unsafe_state"])
        c[1] = self.geometry.x_offset if "x" not in s["unsafe_state"] else c[1]
        return C.cells_from_state_box(self.partition, self.geometry, c,
                                      _state_vec(s["unsafe_halfwidths"]))

    @cached_property
    def target_cells(self):
        s = self.cfg["spec"]
        if s["kind"] != "reach":
            return []
        box = s["target_box"]
        return C.cells_from_state_box(self.partition, self.geometry, _state_vec(box["center"]),
                                      _state_vec(box["halfwidths"]))

    @cached_property
    def initial_cells(self):
        init = self.cfg["spec"]["initial"]
        n = len(self.partition)
        if "cells" in init:
            cells = sorted(set(init["cells"]))
            if cells[-1] >= n:
                raise ValueError(f"initial cell {cells[-1]} out of range ({n} cells)")
            return cells
        box = init["state_box"]
        cells = C.cells_from_state_box(self.partition, self.geometry, _state_vec(box["center"]),
                                       _state_vec(box["halfwidths"]))
        if not cells:
            raise ValueError("the initial state box does not meet the partition")
        return cells

    @cached_property
    def bounded_spec(self):
        s = self.cfg["spec"]
        return C.BoundedSpec(s["kind"], s["horizon"], tuple(self.initial_cells),
                             tuple(self.unsafe_cells), tuple(self.target_cells))

    def fsm(self, mu):
        if mu in self._fsms:
            return self._fsms[mu]
        key = digest(self.abstraction_key, mu, self.cfg["spec"].get("sink_is_unsafe"),
                     self.unsafe_cells)
        path = self._path(f"fsm-{key}.txt")
        if self.use_cache and os.path.exists(path):
            with open(path) as fh:
                fsm = fsm_from_text(fh.read())
            fsm.center_u = np.append(self.centers.controls, np.nan)
        else:
            fsm = self._timed("abstraction", lambda: build_fsm(
                self.partition, self.aug, mu, self.geometry, self.params, self.bounds,
                self.unsafe_cells, self.cfg["spec"]["sink_is_unsafe"],
                self.cfg["partition"]["eta"], self.centers))
            with open(path, "w") as fh:
                fh.write(fsm_to_text(fsm))
        self._fsms[mu] = fsm
        return fsm


# ---------------------------------------------------------------------------
# stages


def simulate_closed_loop(ctx, n, steps, rng):
    """Batch closed-loop runs of the real network from the initial set.

    Returns (per-step states (steps+1, n, 4), controls (steps, n), alive mask
    per step, unsafe-hit mask per trajectory).
    """
    init = ctx.cfg["spec"]["initial"]
    g = ctx.geometry
    if "state_box" in init:
        c = _state_vec(init["state_box"]["center"])
        c[1] = g.x_offset
        h = _state_vec(init["state_box"]["halfwidths"])
        h[1] = 0.0
        s = c + rng.uniform(-1, 1, size=(n, 4)) * h
    else:
        cells = np.array(ctx.initial_cells)
        r = ctx.partition.spec.radius
        s = np.empty((0, 4))
        for _ in range(100):
            if len(s) >= n:
                break
            pick = rng.choice(cells, size=2 * n)
            pts = ctx.partition.centers[pick] + rng.uniform(-r, r, size=(2 * n, 3))
            st, ok = g.working_to_states(pts)
            s = np.vstack([s, st[ok]])
        s = s[:n]
    n = len(s)
    spec = ctx.cfg["spec"]
    if spec["kind"] == "invariant":
        uc = _state_vec(spec["unsafe_state"])
        uh = _state_vec(spec["unsafe_halfwidths"])
        if "x" not in spec["unsafe_state"]:
            uc[1], uh[1] = g.x_offset, 0.0
    states = np.full((steps + 1, n, 4), np.nan)
    controls = np.full((steps, n), np.nan)
    alive = np.zeros((steps + 1, n), dtype=bool)
    hit = np.zeros(n, dtype=bool)
    states[0], alive[0] = s, True
    for t in range(steps + 1):
        a = alive[t]
        if spec["kind"] == "invariant":
            inside = np.all(np.abs(states[t] - uc) <= uh, axis=1) & a
            hit |= inside
        if t == steps or not a.any():
            break
        _, ok = g.working_checked(states[t])
        a = a & ok
        idx = np.flatnonzero(a)
        if len(idx) == 0:
            break
        u = evaluate(ctx.aug, g.full_zeta(states[t, idx]))[:, 0]
        controls[t, idx] = u
        states[t + 1, idx] = step_array(states[t, idx], u, ctx.params)
        alive[t + 1, idx] = True
    return states, controls, alive, hit


def clamp_mismatch(ctx, n, rng):
    """Largest per-pixel gap between clamp outputs and oracle images on domain samples."""
    states = ctx.domain.sample(rng, n)
    out = evaluate_in_chunks(ctx.perception, ctx.geometry.full_zeta(states))
    ref = ctx.geometry.render_batch(states).reshape(n, -1)
    return float(np.max(np.abs(out - ref))) if n else 0.0


def _versions():
    import importlib.metadata as md
    out = {"python": platform.python_version()}
    for pkg in ("visland", "numpy", "scipy", "torch"):
        try:
            out[pkg] = md.version(pkg)
        except md.PackageNotFoundError:
            out[pkg] = None
    return out


def _mu_rows(results):
    return [{"mu": r.mu, "status": r.result.status, "transitions": r.transitions,
             "witness": r.result.witness, "seconds": r.seconds} for r in results]


def run_pipeline(cfg, out_dir=None, use_cache=True):
    """Run every stage; returns the report dict (also written by ``emit_report``)."""
    ctx = Context(cfg, out_dir, use_cache)
    t_start = time.perf_counter()
    seed = cfg["seed"]
    report = {"name": cfg["name"], "seed": seed, "schema_version": cfg["schema_version"],
              "config": json.loads(canonical(cfg)), "versions": _versions(), "notes": []}
    stage = "setup"
    try:
        stage = "partition"
        part = ctx.partition
        stage = "controller"
        ctx.controller
        stage = "perception"
        ctx.perception
        stage = "compose"
        ctx.aug
        stage = "abstraction"
        cd = ctx.centers
        spec = ctx.bounded_spec
        report["partition"] = {"regions": len(part), "shape": list(part.spec.shape),
                               "side": part.spec.side, "traversable": int(cd.traversable.sum())}
        report["unsafe_cells"] = list(ctx.unsafe_cells)
        report["target_cells"] = list(ctx.target_cells)
        report["initial_cells"] = list(ctx.initial_cells)
        if spec.kind == "invariant" and not ctx.unsafe_cells:
            report["notes"].append("the unsafe state box does not meet the partition; no unsafe cells")
        stage = "mu_search"
        t0 = time.perf_counter()
        try:
            ms = C.mu_search(cfg["mu_values"], spec, ctx.fsm)
        except C.NoFeasibleMu as exc:
            report["mu_search"] = _mu_rows(exc.results)
            report["mu_max"] = None
            report["status"] = NO_FEASIBLE_MU
            report["regions"] = []
            ctx.timing["mu_search"] = time.perf_counter() - t0
            report["notes"].append(str(exc))
            _finish(ctx, report, t_start, rng=np.random.default_rng(seed))
            return report
        ctx.timing["mu_search"] = time.perf_counter() - t0
        report["mu_search"] = _mu_rows(ms.results)
        report["mu_max"] = ms.mu_max
        stage = "verification"
        t0 = time.perf_counter()
        regions = part.regions()
        skip = ~cd.traversable
        n_samp = cfg["verification"]["sample_regions"]
        if n_samp is not None:
            rng = np.random.default_rng(seed)
            pool = np.flatnonzero(cd.traversable)
            keep = set(rng.choice(pool, size=min(n_samp, len(pool)), replace=False).tolist())
            regions = [r for r in regions if r.index in keep]
            report["notes"].append(f"verified a random sample of {len(regions)} traversable regions")
        reports = batch_verify(ctx.aug, regions, cd.controls, ms.mu_max, ctx.geometry,
                               cfg["verification"]["budget"], seed, skip)
        ctx.timing["verification"] = time.perf_counter() - t0
        status, bad = aggregate(reports)
        report["status"] = status
        if bad is not None:
            report["first_violated_region"] = bad
            report["notes"].append("a violated envelope means the abstraction's premise fails there, "
                                   "not that the closed loop is unsafe")
        report["regions"] = [_region_row(r) for r in reports]
        stage = "simulation"
        _finish(ctx, report, t_start, rng=np.random.default_rng(seed))
    except Exception as exc:  # structured failure report
        log.exception("stage %s failed", stage)
        report["status"] = "ERROR"
        report["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        report["timing"] = dict(ctx.timing)
    return report


def _region_row(r):
    v = r.verdict
    return {"region_id": int(r.region_id), "center": [float(c) for c in r.center],
            "verdict": v.status, "splits": int(v.splits),
            "bound": None if v.bound is None else float(v.bound), "note": v.note,
            "witness": v.witness, "millis": float(r.millis)}


def _finish(ctx, report, t_start, rng):
    cfg = ctx.cfg
    counts = {k: 0 for k in (PROVED, VIOLATED, UNKNOWN, SKIPPED)}
    for r in report["regions"]:
        counts[r["verdict"]] += 1
    checked = counts[PROVED] + counts[VIOLATED] + counts[UNKNOWN]
    counts["proved_fraction"] = counts[PROVED] / checked if checked else None
    report["summary"] = counts
    t0 = time.perf_counter()
    n = cfg["simulation"]["trajectories"]
    steps = cfg["simulation"]["steps"]
    steps = cfg["spec"]["horizon"] if steps is None else steps
    if n > 0:
        states, controls, alive, hit = simulate_closed_loop(ctx, n, steps, rng)
        report["simulation"] = {"trajectories": int(states.shape[1]), "steps": steps,
                                "unsafe_entries": int(hit.sum()),
                                "ended_early": int((~alive[-1]).sum())}
        ctx._sim = (states, controls, alive)
    ctx.timing["simulation"] = time.perf_counter() - t0
    report["perception"] = {"max_clamp_gap": clamp_mismatch(ctx, 200, np.random.default_rng(cfg["seed"] + 1))}
    if cfg["controller"]["source"] == "train":
        report["perception"]["teacher_agreement"] = teacher_agreement(
            ctx.controller, ctx.geometry, ctx.domain, 1000, np.random.default_rng(cfg["seed"] + 2),
            tp=ctx.teacher)
    ctx.timing["total"] = time.perf_counter() - t_start
    report["timing"] = dict(ctx.timing)
    report["_ctx"] = ctx


# ---------------------------------------------------------------------------
# reports


REGION_COLUMNS = ["region_id", "center", "verdict", "splits", "millis"]


def regions_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REGION_COLUMNS)
    for r in rows:
        w.writerow([r["region_id"], " ".join(f"{c:.6g}" for c in r["center"]), r["verdict"],
                    r["splits"], f"{r['millis']:.3f}"])
    return buf.getvalue()


def summary_text(report):
    lines = [f"scenario: {report['name']}", f"status: {report['status']}",
             f"mu_max: {report.get('mu_max')}"]
    if "error" in report:
        e = report["error"]
        lines.append(f"error in stage {e['stage']}: {e['type']}: {e['message']}")
    if "partition" in report:
        p = report["partition"]
        lines.append(f"regions: {p['regions']} ({p['traversable']} traversable)")
        lines.append(f"initial cells: {len(report['initial_cells'])}, unsafe cells: "
                     f"{len(report['unsafe_cells'])}")
    for m in report.get("mu_search", []):
        lines.append(f"  mu={m['mu']:g}: {m['status']} ({m['transitions']} transitions)")
    if "summary" in report:
        s = report["summary"]
        lines.append(f"verdicts: {s[PROVED]} proved, {s[VIOLATED]} violated, {s[UNKNOWN]} unknown, "
                     f"{s[SKIPPED]} skipped")
    if "simulation" in report:
        s = report["simulation"]
        lines.append(f"simulation: {s['trajectories']} runs x {s['steps']} steps, "
                     f"{s['unsafe_entries']} entered the unsafe box")
    lines += [f"note: {n}" for n in report.get("notes", [])]
    return "\n".join(lines) + "\n"


def strip_timing(obj):
    """Copy of a report without timing fields, for reproducibility checks."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS and k != "_ctx"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if k != "_ctx"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def emit_report(report, out_dir):
    """Write report.json, summary.txt, regions.csv, mu.csv and simulation.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def write(name, text):
        p = os.path.join(out_dir, name)
        with open(p, "w") as fh:
            fh.write(text)
        paths[name] = p

    write("report.json", json.dumps(_jsonable(report), indent=1, sort_keys=True) + "\n")
    write("summary.txt", summary_text(report))
    write("regions.csv", regions_csv(report.get("regions", [])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "status", "transitions", "seconds"])
    for m in report.get("mu_search", []):
        w.writerow([m["mu"], m["status"], m["transitions"], f"{m['seconds']:.4f}"])
    write("mu.csv", buf.getvalue())
    ctx = report.get("_ctx")
    sim = getattr(ctx, "_sim", None)
    if sim is not None:
        states, controls, alive = sim
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "step", "theta", "x", "y", "z", "u"])
        for i in range(states.shape[1]):
            for t in range(states.shape[0]):
                if not alive[t, i]:
                    break
                u = controls[t, i] if t < controls.shape[0] else float("nan")
                th, x, y, z = states[t, i]
                w.writerow([i, t, f"{th:.9g}", f"{x:.9g}", f"{y:.9g}", f"{z:.9g}", f"{u:.9g}"])
        write("simulation.csv", buf.getvalue())
    return paths


def exit_code(report):
    return EXIT_CODES.get(report.get("status"), 1)
