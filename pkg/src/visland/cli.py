"""Command line entry point: ``visland <subcommand>``.

Exit codes: 0 SAFE (or success), 2 UNSAFE-ENVELOPE (or a failed FSM
check), 3 UNKNOWN, 4 NO-FEASIBLE-MU, 1 any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

log = logging.getLogger("visland")


def _config(arg):
    from .config import builtin_config, load_config
    if arg.startswith("builtin:"):
        return builtin_config(arg.split(":", 1)[1])
    return load_config(arg)


def _ids(text):
    if not text:
        return []
    return [int(t) for t in text.replace(",", " ").split()]


def _context(args):
    from .pipeline import Context
    cfg = _config(args.config)
    return Context(cfg, getattr(args, "out", None) or cfg["output"]["dir"])


def cmd_render(args):
    from .geometry import AircraftState, CameraIntrinsics, Geometry, MonoImage
    if args.config:
        g = _context(args).geometry
    else:
        g = Geometry(camera=CameraIntrinsics(WP=args.q, HP=args.q))
    state = AircraftState(*args.state)
    img = g.render(state)
    if args.network:
        from .perception import PerceptionBuildSpec, assemble_perception_network, threshold_image
        spec = PerceptionBuildSpec(g.q, len(g.lines), args.k)
        net = assemble_perception_network(spec, g.camera)
        from .network import evaluate
        bits = threshold_image(evaluate(net, g.full_zeta(state)), spec).reshape(g.q, g.q)
        img = MonoImage(g.q, bits)
    print(img.to_ascii())
    return 0


def cmd_build_perception(args):
    from .network import save_weights
    from .perception import PerceptionBuildSpec, assemble_perception_network, build_manifest
    spec = PerceptionBuildSpec(args.q, args.lines, args.k, args.delta_deg)
    net = assemble_perception_network(spec)
    if args.out:
        save_weights(net, args.out)
    print(json.dumps(build_manifest(net, spec), indent=1))
    return 0


def cmd_compose(args):
    from .network import load_weights, save_weights
    from .perception import build_augmented_network
    aug = build_augmented_network(load_weights(args.perception), load_weights(args.controller),
                                  fuse=args.fuse)
    save_weights(aug, args.out)
    print(f"wrote {args.out}: {aug.input_dim} inputs, {aug.output_dim} outputs, "
          f"{aug.relu_count} ReLUs")
    return 0


def cmd_simulate(args):
    from .dynamics import simulate_trajectory
    from .geometry import AircraftState
    ctx = _context(args)
    steps = args.steps if args.steps is not None else ctx.cfg["spec"]["horizon"]
    trace = simulate_trajectory(AircraftState(*args.state), ctx.aug, steps, ctx.geometry, ctx.params)
    print("step theta x y z u")
    for r in trace.records:
        s = r.state
        u = "" if r.u is None else f"{r.u:.6g}"
        print(f"{r.step} {s.theta:.6g} {s.x:.6g} {s.y:.6g} {s.z:.6g} {u}")
        if args.images:
            print(r.image.to_ascii())
    if trace.reason != "completed":
        print(f"# stopped: {trace.reason}")
    return 0


def cmd_abstract(args):
    from .abstraction import fsm_to_text
    ctx = _context(args)
    fsm = ctx.fsm(args.mu)
    text = fsm_to_text(fsm)
    if args.fsm_out:
        with open(args.fsm_out, "w") as fh:
            fh.write(text)
    print(f"{fsm.num_states} states ({int(fsm.traversable.sum())} traversable), "
          f"{fsm.num_transitions()} transitions, ball radius {fsm.meta['ball_radius']:.4g}")
    print(f"initial cells: {ctx.initial_cells}")
    print(f"unsafe cells: {ctx.unsafe_cells}")
    return 0


def cmd_check_fsm(args):
    from .abstraction import fsm_from_text
    from .checker import INVARIANT, REACH, BoundedSpec, check, export_cnf
    with open(args.fsm) as fh:
        fsm = fsm_from_text(fh.read())
    kind = REACH if args.target else INVARIANT
    spec = BoundedSpec(kind, args.horizon, tuple(_ids(args.initial)),
                       unsafe=tuple(_ids(args.unsafe)), target=tuple(_ids(args.target)))
    res = check(fsm, spec)
    print(res.status)
    if res.witness is not None:
        print("path: " + " ".join(str(s) for s in res.witness))
    if args.cnf:
        with open(args.cnf, "w") as fh:
            fh.write(export_cnf(fsm, spec))
    return 0 if res.holds else 2


def cmd_verify_regions(args):
    from .pipeline import EXIT_CODES, regions_csv, _region_row
    from .verifier import Envelope, aggregate, batch_verify, region_to_input_box, to_vnnlib
    ctx = _context(args)
    mu = args.mu if args.mu is not None else max(ctx.cfg["mu_values"])
    cd = ctx.centers
    ids = _ids(args.regions)
    regions = ctx.partition.regions()
    if ids:
        regions = [r for r in regions if r.index in set(ids)]
    reports = batch_verify(ctx.aug, regions, cd.controls, mu, ctx.geometry,
                           args.budget or ctx.cfg["verification"]["budget"], ctx.cfg["seed"],
                           ~cd.traversable)
    sys.stdout.write(regions_csv([_region_row(r) for r in reports]))
    if args.vnnlib:
        os.makedirs(args.vnnlib, exist_ok=True)
        for r in regions:
            if not cd.traversable[r.index]:
                continue
            try:
                lo, hi = region_to_input_box(r.lower, r.upper, ctx.geometry)
            except Exception as exc:
                log.warning("region %d: no input box (%s)", r.index, exc)
                continue
            env = Envelope(np.atleast_1d(cd.controls[r.index]), mu)
            with open(os.path.join(args.vnnlib, f"region_{r.index}.vnnlib"), "w") as fh:
                fh.write(to_vnnlib(lo, hi, env, f"region {r.index}, mu {mu}"))
    status, bad = aggregate(reports)
    print(f"# aggregate {status}" + (f" (region {bad})" if bad is not None else ""))
    return EXIT_CODES[status]


def cmd_pipeline(args):
    from .pipeline import emit_report, exit_code, run_pipeline, summary_text
    cfg = _config(args.config)
    out = args.out or cfg["output"]["dir"]
    report = run_pipeline(cfg, out, use_cache=not args.no_cache)
    emit_report(report, out)
    sys.stdout.write(summary_text(report))
    return exit_code(report)


def cmd_train(args):
    from .network import save_weights
    from .training import teacher_agreement
    ctx = _context(args)
    if args.epochs is not None:
        ctx.cfg["controller"]["train"]["epochs"] = args.epochs
    ctx.cfg["controller"]["source"] = "train"
    net = ctx.controller
    save_weights(net, args.weights_out)
    agree = teacher_agreement(net, ctx.geometry, ctx.domain, 1000,
                              np.random.default_rng(ctx.cfg["seed"] + 2), tp=ctx.teacher)
    print(f"wrote {args.weights_out}; within 0.1 rad/s of the teacher on {100 * agree:.1f}% "
          "of held-out samples")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="visland", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required,
                        help="JSON config path or builtin:<desk|full|trivial|stress>")
        sp.add_argument("--out", help="run directory (default: the config's output.dir)")

    s = sub.add_parser("render", help="ASCII image of the runway for one state")
    with_config(s, required=False)
    s.add_argument("--q", type=int, default=16)
    s.add_argument("--state", type=float, nargs=4, required=True, metavar=("THETA", "X", "Y", "Z"))
    s.add_argument("--network", action="store_true", help="render through the perception network")
    s.add_argument("--k", type=float, default=1e3)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("build-perception", help="assemble the perception network")
    s.add_argument("--q", type=int, default=16)
    s.add_argument("--lines", type=int, default=2)
    s.add_argument("--k", type=float, default=1e3)
    s.add_argument("--delta-deg", type=float, default=1e-9)
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_perception)

    s = sub.add_parser("compose", help="compose perception and controller weight files")
    s.add_argument("--perception", required=True)
    s.add_argument("--controller", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fuse", action="store_true")
    s.set_defaults(func=cmd_compose)

    s = sub.add_parser("simulate", help="closed-loop trajectory from one state")
    with_config(s)
    s.add_argument("--state", type=float, nargs=4, required=True, metavar=("THETA", "X", "Y", "Z"))
    s.add_argument("--steps", type=int)
    s.add_argument("--images", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("abstract", help="build the finite-state abstraction for one mu")
    with_config(s)
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--fsm-out")
    s.set_defaults(func=cmd_abstract)

    s = sub.add_parser("check-fsm", help="bounded check of an FSM text file")
    s.add_argument("--fsm", required=True)
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--initial", required=True, help="comma separated state ids")
    s.add_argument("--unsafe", default="", help="extra unsafe ids (labels in the file also count)")
    s.add_argument("--target", default="", help="target ids; switches to a reach check")
    s.add_argument("--cnf", help="also write the DIMACS query here")
    s.set_defaults(func=cmd_check_fsm)

    s = sub.add_parser("verify-regions", help="verify control envelopes of partition cells")
    with_config(s)
    s.add_argument("--mu", type=float)
    s.add_argument("--regions", default="", help="comma separated ids (default: all)")
    s.add_argument("--budget", type=int)
    s.add_argument("--vnnlib", help="directory for per-region property files")
    s.set_defaults(func=cmd_verify_regions)

    s = sub.add_parser("pipeline", help="run everything and write the report")
    with_config(s)
    s.add_argument("--no-cache", action="store_true")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("train", help="behavioral cloning of the controller")
    with_config(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--weights-out", required=True)
    s.set_defaults(func=cmd_train)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        if args.verbose:
            log.exception("failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
