"""Command-line entry point: ``maxent <command> ...``.

Exit codes: 0 when every checked invariant held, 2 when a counterexample was
recorded, 1 on invalid input or solver failure.
"""

import argparse
import json
import logging
import math
import sys

import numpy as np

from maxent import applications, experiments, minnorm, witness
from maxent.dual import SolveOptions, solve_dual
from maxent.errors import CounterexampleError, MaxEntError
from maxent.io import emit_report, load_instance
from maxent.oracles import ExplicitOracle
from maxent.support import facets_from_support

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_COUNTEREXAMPLE = 2

log = logging.getLogger("maxent")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _options(args):
    return SolveOptions(method=getattr(args, "method", "newton"),
                        accelerate=not getattr(args, "no_accel", False),
                        max_iters=getattr(args, "max_iters", None))


def _emit(args, report, kind, fmt="json"):
    out = getattr(args, "out", None)
    text = emit_report(report, out, fmt, args.deterministic, kind)
    if out is None:
        sys.stdout.write(text)


def _explicit_facets(inst):
    if inst.facets is not None or not isinstance(inst.oracle, ExplicitOracle):
        return inst.facets
    return facets_from_support(inst.oracle.points)


def cmd_solve(args):
    inst = load_instance(args.instance)
    if inst.theta is None:
        raise MaxEntError("instance has no theta")
    rep = solve_dual(inst.oracle, inst.theta, args.eps, facets=inst.facets,
                     options=_options(args))
    _emit(args, rep, "solve")
    return EXIT_OK


def cmd_witness(args):
    inst = load_instance(args.instance)
    oracle = inst.oracle
    if not isinstance(oracle, ExplicitOracle):
        raise MaxEntError("witness needs an explicit support")
    facets = _explicit_facets(inst)
    opts = SolveOptions(radius=args.ystar_radius)
    rep = solve_dual(oracle, inst.theta, args.eps / 2.0, facets=facets, options=opts)
    delta = rep.radius.delta
    y_t, basis, tr = witness.witness(oracle, facets, inst.theta, rep.y, delta, args.eps)
    out = {
        "norm_y_star": tr.norm_star, "norm_y_truncated": tr.norm_truncated,
        "h_y_star": tr.h_star, "h_y_truncated": tr.h_truncated, "margin": tr.margin,
        "norm_bound": witness.norm_bound(oracle.dimension, facets.unary_complexity, delta),
        "delta": delta, "vertex": basis.vertex, "basis_rows": basis.indices,
        "coefficients": basis.coefficients, "y_truncated": y_t,
    }
    _emit(args, out, "witness")
    return EXIT_OK


def _flat_table(cert):
    rows = [("probe", "norm", "gap")]
    rows.extend(cert.rows())
    return rows


def cmd_lowerbound(args):
    pts = (minnorm.flat_simplex(args.catalogue) if args.simplex is None
           else np.asarray(_read_json(args.simplex)))
    inst = minnorm.build_flat_instance(pts)
    cert = minnorm.certify_lower_bound(inst, probes=args.probes, seed=args.seed)
    summary = {"delta": cert.delta, "tau": cert.tau, "y_star": cert.y_star, "eps": cert.eps,
               "probe_radius": cert.probe_radius, "min_gap": cert.min_gap,
               "family": inst.family}
    emit_report(summary, None, "json", args.deterministic, "lowerbound", stream=sys.stdout)
    if args.out:
        emit_report(_flat_table(cert), args.out, "csv", args.deterministic, "lowerbound")
    return EXIT_OK


def cmd_minnorm(args):
    V = np.asarray(_read_json(args.vectors), dtype=float)
    res = minnorm.min_norm_point(V)
    out = {"v": res.v, "delta": res.delta, "tau": res.tau, "y_star": res.y_star,
           "mu": res.mu, "iterations": res.iterations}
    _emit(args, out, "minnorm")
    return EXIT_OK


def cmd_scale(args):
    A = np.asarray(_read_json(args.matrix), dtype=float)
    inst = applications.ScalingInstance(A, np.array(_floats(args.r)), np.array(_floats(args.c)))
    res = applications.matrix_scale(inst, args.eps, _options(args))
    _emit(args, res, "scale")
    return EXIT_OK


def cmd_capacity(args):
    data = _read_json(args.instance)
    from maxent.io import instance_from_dict
    from maxent.support import FacetSystem

    inst = instance_from_dict({k: v for k, v in data.items() if k not in {"B", "B_facets"}})
    if "B" in data:
        cap_inst = applications.CapacityInstance(inst.oracle, B_vertices=np.asarray(data["B"]))
    elif "B_facets" in data:
        fac = FacetSystem.from_arrays(data["B_facets"]["A"], data["B_facets"]["b"])
        cap_inst = applications.CapacityInstance(inst.oracle, B_facets=fac)
    else:
        raise MaxEntError("capacity instance needs 'B' (vertices) or 'B_facets'")
    res = applications.capacity(cap_inst, args.eps, max_outer=args.max_outer)
    out = res.to_dict()
    out["max_coefficient"] = applications.max_coefficient(cap_inst)
    _emit(args, out, "capacity")
    return EXIT_OK


def cmd_bl(args):
    V = np.asarray(_read_json(args.vectors), dtype=float)
    if args.worst_case:
        res = applications.bl_worst_case(V, args.eps, max_outer=args.max_outer)
        _emit(args, res, "bl_worst_case")
        return EXIT_OK
    if args.p is None:
        raise MaxEntError("--p is required unless --worst-case is given")
    val = applications.bl_constant(V, _floats(args.p), args.eps)
    _emit(args, {"bl": val, "finite": not math.isinf(val)}, "bl")
    return EXIT_OK


def cmd_stability(args):
    inst = load_instance(args.instance)
    run = experiments.stability_experiment(
        inst.oracle, num_pairs=args.pairs, eps_grid=_floats(args.eps), seed=args.seed,
        facets=inst.facets, instance_id=args.instance_id or args.instance,
        options=_options(args))
    text = emit_report(run.table(), args.out, "csv", args.deterministic, "stability")
    if args.out is None:
        sys.stdout.write(text)
    log.info("%d rows, %d violations, %d failed solves", len(run.rows), len(run.violations),
             len(run.failures))
    if run.counterexamples:
        sys.stderr.write(json.dumps({"counterexamples": run.counterexamples}) + "\n")
        return EXIT_COUNTEREXAMPLE
    return EXIT_OK


def cmd_boundary(args):
    run = experiments.boundary_demo(args.m, args.n, args.trials, args.seed)
    _emit(args, run, "boundary")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="maxent", description="Max-entropy dual solver toolkit")
    p.add_argument("--deterministic", action="store_true",
                   help="omit timestamps so identical runs give identical files")
    p.add_argument("--log-level", default="WARNING")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--max-iters", type=int, default=None)
        sp.add_argument("--no-accel", action="store_true")
        sp.add_argument("--method", choices=("newton", "gradient"), default="newton")

    sp = sub.add_parser("solve", parents=[common], help="solve the dual for an instance file")
    sp.add_argument("instance")
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("witness", parents=[common], help="truncated short dual witness")
    sp.add_argument("instance")
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--ystar-radius", type=float, default=None,
                    help="ball radius for the reference solve (default: certified radius)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_witness)

    sp = sub.add_parser("lowerbound", parents=[common], help="flat-simplex length lower bound")
    sp.add_argument("--simplex", default=None, help="JSON list of m+1 integer points, first = 0")
    sp.add_argument("--catalogue", type=int, default=2, help="bundled simplex dimension")
    sp.add_argument("--probes", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV file for the probe table")
    sp.set_defaults(func=cmd_lowerbound)

    sp = sub.add_parser("minnorm", parents=[common], help="min-norm point of a vector set")
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_minnorm)

    sp = sub.add_parser("scale", parents=[common], help="(r, c) matrix scaling")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--r", required=True)
    sp.add_argument("--c", required=True)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_scale)

    sp = sub.add_parser("capacity", parents=[common], help="capacity of a polynomial over a constraint polytope")
    sp.add_argument("instance")
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--max-outer", type=int, default=2000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_capacity)

    sp = sub.add_parser("bl", parents=[common], help="rank-1 Brascamp-Lieb constant")
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--p", default=None)
    sp.add_argument("--worst-case", action="store_true")
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--max-outer", type=int, default=2000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bl)

    sp = sub.add_parser("stability", parents=[common], help="stability experiment on an explicit instance")
    sp.add_argument("instance")
    sp.add_argument("--pairs", type=int, default=200)
    sp.add_argument("--eps", default="1e-4", help="comma-separated perturbation sizes")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instance-id", default=None)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("boundary", parents=[common], help="empirical-mean boundary demo")
    sp.add_argument("--m", type=int, default=10)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_boundary)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CounterexampleError as exc:
        sys.stderr.write(f"counterexample: {exc}\n{json.dumps(exc.dump, default=str)}\n")
        return EXIT_COUNTEREXAMPLE
    except (MaxEntError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
