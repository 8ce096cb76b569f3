"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 infeasible instance or unequal
masses, 3 solver did not reach its tolerance.  The default solver tolerance
can be set with the ``ROADEMD_TOL`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from collections.abc import Sequence

from . import __version__
from . import measures as M
from .dpdp import Scenario, ScenarioError, critical_rate, predicted_service_time, simulate
from .emd_approx import PartingError, emd_bounds, emd_path
from .emd_exact import OverlapError, UnequalMassError, emd_exact
from .flow import FlowError, InfeasibleError, min_cost_flow_linear
from .instance import InstanceError, load
from .measures import MeasureError
from .roadmap import RoadmapError

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3
TOL_ENV = "ROADEMD_TOL"
FALLBACK_TOL = 1e-7


class SolverToleranceError(RuntimeError):
    pass


def fmt(x: float) -> str:
    return f"{x:.9g}"


def default_tol() -> float:
    raw = os.environ.get(TOL_ENV)
    if raw is None:
        return FALLBACK_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise InstanceError(f"{TOL_ENV}={raw!r} is not a number") from None
    if not tol > 0:
        raise InstanceError(f"{TOL_ENV} must be positive")
    return tol


def _node_label(node) -> str:
    return ":".join(str(p) for p in node) if isinstance(node, tuple) else str(node)


def _write_flow(path: str, net, flow, costs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "tail", "head", "flow", "cost"])
        for k, (u, v) in enumerate(net.edges):
            w.writerow([k, _node_label(u), _node_label(v), fmt(float(flow[k])), fmt(costs[k])])


# ----------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    inst = load(args.instance)
    rm = inst.roadmap
    print(f"OK: {len(rm.vertices)} vertices, {len(rm.roads)} roads, total length {fmt(rm.total_length)}")
    for name, m in (("src", inst.src), ("dst", inst.dst)):
        if m is not None:
            print(f"measure {name}: {len(m)} roads, total mass {fmt(M.total(m))}")
    if inst.src is not None and inst.dst is not None:
        ts, td = M.total(inst.src), M.total(inst.dst)
        if abs(ts - td) > 1e-9 * max(1.0, ts):
            print("note: measure totals differ, so the EMD is undefined for this pair")
    if inst.pmf is not None:
        print(f"pmf: {len(inst.pmf.entries)} entries")
    return EXIT_OK


def cmd_emd(args) -> int:
    inst = load(args.instance)
    src, dst = inst.measures()
    tol = args.tol if args.tol is not None else default_tol()
    mode = args.mode
    if mode != "exact" and args.epsilon is None:
        raise InstanceError(f"--mode {mode} needs --epsilon")
    if mode == "exact":
        res = emd_exact(inst.roadmap, src, dst, tol=tol)
        print(f"emd {fmt(res.value)}")
        print(f"gap {fmt(res.gap)} iterations {res.iterations} "
              f"nodes {res.network.network.num_nodes} edges {res.network.network.num_edges}")
        if args.dump_flow:
            costs = [c.value(float(x)) for c, x in zip(res.network.costs, res.flow)]
            _write_flow(args.dump_flow, res.network.network, res.flow, costs)
        if not res.converged:
            raise SolverToleranceError(f"duality gap {res.gap:.3g} above tolerance {tol:.3g}")
        return EXIT_OK
    if mode in ("lower", "upper"):
        b = emd_bounds(inst.roadmap, src, dst, args.epsilon, which=mode)
        val = b.lower if mode == "lower" else b.upper
        net = b.network
        print(f"emd_{mode} {fmt(val)}")
        print(f"epsilon {fmt(args.epsilon)} nodes {net.network.num_nodes} edges {net.network.num_edges}")
        if args.dump_flow:
            w = net.lower if mode == "lower" else net.upper
            sol = min_cost_flow_linear(net.network, w)
            _write_flow(args.dump_flow, net.network, sol.flow, w * sol.flow)
        return EXIT_OK
    res = emd_path(inst.roadmap, src, dst, args.epsilon)
    pn = res.network
    print(f"emd_path {fmt(res.value)}")
    print(f"epsilon {fmt(args.epsilon)} nodes {pn.network.num_nodes} edges {pn.network.num_edges}")
    if args.dump_flow:
        _write_flow(args.dump_flow, pn.network, res.flow, pn.weights * res.flow)
    return EXIT_OK


CONVERGENCE_COLUMNS = [
    "epsilon", "w_lower", "w_upper", "w_path", "exact", "gap",
    "exact_nodes", "exact_edges", "approx_nodes", "approx_edges",
    "path_nodes", "path_edges", "cells",
]
TIMING_COLUMNS = ["t_exact", "t_bounds", "t_path"]


def cmd_convergence(args) -> int:
    inst = load(args.instance)
    src, dst = inst.measures()
    tol = args.tol if args.tol is not None else default_tol()
    t0 = time.perf_counter()
    ex = emd_exact(inst.roadmap, src, dst, tol=tol)
    t_exact = time.perf_counter() - t0
    if not ex.converged:
        raise SolverToleranceError(f"exact solve: gap {ex.gap:.3g} above tolerance {tol:.3g}")
    rows = []
    for eps in args.epsilons:
        t0 = time.perf_counter()
        b = emd_bounds(inst.roadmap, src, dst, eps)
        t1 = time.perf_counter()
        p = emd_path(inst.roadmap, src, dst, eps)
        t2 = time.perf_counter()
        row = [
            fmt(eps), fmt(b.lower), fmt(b.upper), fmt(p.value), fmt(ex.value), fmt(b.gap),
            ex.network.network.num_nodes, ex.network.network.num_edges,
            b.network.network.num_nodes, b.network.network.num_edges,
            p.network.network.num_nodes, p.network.network.num_edges,
            p.network.tessellation.num_cells,
        ]
        if args.timing:
            row += [fmt(t_exact), fmt(t1 - t0), fmt(t2 - t1)]
        rows.append(row)
    header = CONVERGENCE_COLUMNS + (TIMING_COLUMNS if args.timing else [])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    inst = load(args.instance)
    if inst.pmf is None:
        raise InstanceError("instance has no 'pmf' section", "pmf")
    tol = args.tol if args.tol is not None else default_tol()
    pred = predicted_service_time(inst.roadmap, inst.pmf, tol=tol)
    s_bar = pred.service_time
    lam_star = critical_rate(s_bar, args.m)
    if args.rate is not None:
        lam = args.rate
    elif args.lambda_offset is not None:
        lam = lam_star + args.lambda_offset
    else:
        lam = args.lambda_mult * lam_star
    res = simulate(Scenario(inst.roadmap, inst.pmf, args.m, lam, args.horizon, args.seed))
    print(f"expected_pd_distance {fmt(pred.pd_distance)}")
    print(f"emd {fmt(pred.emd)}")
    print(f"s_bar {fmt(s_bar)}")
    print(f"lambda_star {fmt(lam_star)}")
    print(f"lambda {fmt(lam)}")
    print(f"arrived {res.num_arrived} completed {res.num_completed} outstanding {res.final_outstanding}")
    print(f"completion_rate {fmt(res.completion_rate)}")
    print(f"mean_service_time {fmt(res.mean_service_time)}")
    print(f"renewals {len(res.renewals)}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "outstanding", "arrived", "completed"])
            for row in zip(res.times, res.outstanding, res.arrived, res.completed):
                w.writerow([fmt(row[0]), *map(int, row[1:])])
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _epsilons(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("epsilons must be positive")
    return vals


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="roademd",
        description="Earth Mover's distance on road networks.",
        epilog=f"Exit codes: 0 ok, 1 invalid input, 2 infeasible/unequal mass, 3 solver tolerance. "
        f"Default tolerance from ${TOL_ENV} (else {FALLBACK_TOL:g}).",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse an instance file and check all invariants")
    v.add_argument("instance")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser(
        "emd",
        help="compute the EMD between the src and dst measures",
        epilog="--dump-flow CSV columns: edge, tail, head, flow, cost. "
        "Node labels are v:<vertex>, r:<road>, s:<road>:<cell>, d:<road>:<cell> or c:<road>:<cell>.",
    )
    e.add_argument("instance")
    e.add_argument("--mode", choices=["exact", "lower", "upper", "path"], default="exact")
    e.add_argument("--epsilon", type=_positive)
    e.add_argument("--tol", type=_positive)
    e.add_argument("--dump-flow", metavar="CSV")
    e.set_defaults(func=cmd_emd)

    c = sub.add_parser(
        "convergence",
        help="approximation bounds and network sizes over a range of epsilon",
        epilog="CSV columns: " + ", ".join(CONVERGENCE_COLUMNS)
        + "; with --timing also " + ", ".join(TIMING_COLUMNS) + " (seconds).",
    )
    c.add_argument("instance")
    c.add_argument("--epsilons", type=_epsilons, default=[0.5, 0.25, 0.1, 0.05, 0.02])
    c.add_argument("--tol", type=_positive)
    c.add_argument("--out", metavar="CSV")
    c.add_argument("--timing", action="store_true", help="add wall-clock columns (not deterministic)")
    c.set_defaults(func=cmd_convergence)

    s = sub.add_parser(
        "simulate",
        help="simulate the gated nearest-neighbour fleet policy",
        epilog="--out CSV columns: time, outstanding, arrived, completed (one row per event).",
    )
    s.add_argument("instance")
    s.add_argument("--m", type=int, default=1, help="number of vehicles")
    rate = s.add_mutually_exclusive_group(required=True)
    rate.add_argument("--lambda", dest="rate", type=_positive, help="arrival rate")
    rate.add_argument("--lambda-mult", type=_positive, help="arrival rate as a multiple of lambda*")
    rate.add_argument("--lambda-offset", type=float, help="arrival rate as lambda* plus this offset")
    s.add_argument("--horizon", type=float, default=1000.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=_positive)
    s.add_argument("--out", metavar="CSV")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UnequalMassError, InfeasibleError, OverlapError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverToleranceError, PartingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (InstanceError, RoadmapError, MeasureError, ScenarioError, FlowError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
