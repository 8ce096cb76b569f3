"""Exact EMD on a road network as a convex-cost min-cost flow.

Every road becomes a node.  A road that only supplies mass gets two
*decision* edges out of it (to its tail and head vertex), a road that only
demands mass gets two decision edges into it.  The flow ``x`` on the tail
edge of road ``r`` costs ``qcost(phi_r, x)``: the cheapest way to move ``x``
units between the interior of ``r`` and its tail is to use the ``x`` units
nearest to the tail.  The head edge costs the same on the mirrored density.
Vertices are joined by *routing* edges weighted by the shortest joining
road.  The min-cost flow on this network equals the EMD.
"""

from __future__ import annotations

import logging
from collections.abc import Hashable
from dataclasses import dataclass, field

import numpy as np

from . import measures as M
from .flow import (
    ConvexCost,
    ConvexSolution,
    FlowError,
    FlowNetwork,
    LinearCost,
    check_admissible,
    decompose_paths,
    min_cost_flow_convex,
)
from .measures import Density, Measure
from .roadmap import AddressRemap, RoadMap, crack_roads

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
TOTAL_TOL = 1e-9
DEFAULT_TOL = 1e-7


class UnequalMassError(ValueError):
    pass


class OverlapError(ValueError):
    """A road carries mass of both measures."""


def vnode(v: str) -> tuple[str, str]:
    return ("v", v)


def rnode(r: str) -> tuple[str, str]:
    return ("r", r)


@dataclass
class PreparedInstance:
    """Road map and measures after min-subtraction and road cracking."""

    roadmap: RoadMap
    src: Measure
    dst: Measure
    remap: AddressRemap
    common: Measure


def prepare_instance(
    rmap: RoadMap, src: Measure, dst: Measure, *, split_gaps: bool = False
) -> PreparedInstance:
    lengths = {r.id: r.length for r in rmap.roads}
    M.check_measure(src, lengths)
    M.check_measure(dst, lengths)
    ts, td = M.total(src), M.total(dst)
    if abs(ts - td) > TOTAL_TOL * max(1.0, ts):
        raise UnequalMassError(f"total masses differ: {ts!r} vs {td!r}")
    common = M.pointwise_min(src, dst)
    s = M.subtract(src, common).pruned()
    d = M.subtract(dst, common).pruned()
    cracked, s2, d2, remap = crack_roads(rmap, s, d, split_gaps=split_gaps)
    return PreparedInstance(cracked, s2, d2, remap, common)


def classify_roads(
    rmap: RoadMap, src: Measure, dst: Measure, tol: float = MASS_TOL
) -> tuple[list[str], list[str], list[str]]:
    """Split roads into supply, demand and transshipment roads."""
    S, D, T = [], [], []
    for r in rmap.road_ids:
        ms, md = M.road_mass(src, r), M.road_mass(dst, r)
        if ms > tol and md > tol:
            raise OverlapError(f"road {r!r} carries both measures ({ms:.6g} and {md:.6g})")
        b = ms - md
        if b > tol:
            S.append(r)
        elif b < -tol:
            D.append(r)
        else:
            T.append(r)
    return S, D, T


def qcost_edge(d: Density) -> ConvexCost:
    """Edge cost ``x -> qcost(d, x)`` with the right derivative at zero flow."""

    def deriv(x: float) -> float:
        return M.inverse_cdf(d, x) if x > 0 else d.support_start

    return ConvexCost(
        value_fn=lambda x: M.qcost(d, x),
        derivative_fn=deriv,
        x_max=d.total,
        breakpoints=d.mass_breakpoints,
    )


@dataclass
class WassersteinNetwork:
    network: FlowNetwork
    costs: list
    roadmap: RoadMap
    supply_roads: list[str]
    demand_roads: list[str]
    transshipment_roads: list[str]
    tconn: dict[str, int]
    hconn: dict[str, int]
    routing: list[int]
    active_density: dict[str, Density]

    def edge_label(self, k: int) -> tuple[str, str]:
        u, v = self.network.edges[k]
        return (u[1], v[1])

    def edge_by_label(self, tail: str, head: str) -> int:
        for k in range(self.network.num_edges):
            if self.edge_label(k) == (tail, head):
                return k
        raise KeyError((tail, head))


def build_wasserstein_network(rmap: RoadMap, src: Measure, dst: Measure) -> WassersteinNetwork:
    """Construct the exact network; the instance must already satisfy the
    one-measure-per-road condition (see :func:`prepare_instance`)."""
    ts, td = M.total(src), M.total(dst)
    if abs(ts - td) > TOTAL_TOL * max(1.0, ts):
        raise UnequalMassError(f"total masses differ: {ts!r} vs {td!r}")
    S, D, T = classify_roads(rmap, src, dst)
    sset = set(S)
    nodes: list[Hashable] = [vnode(v) for v in rmap.vertices] + [rnode(r) for r in rmap.road_ids]
    supply: dict[Hashable, float] = {}
    edges: list[tuple[Hashable, Hashable]] = []
    costs: list = []
    tconn: dict[str, int] = {}
    hconn: dict[str, int] = {}
    active: dict[str, Density] = {}

    for road in rmap.roads:
        r = road.id
        if r in T:
            continue
        phi = src[r] if r in sset else dst[r]
        active[r] = phi
        supply[rnode(r)] = phi.total if r in sset else -phi.total
        chi = M.reverse(phi)
        ends = ((road.tail, phi, tconn), (road.head, chi, hconn))
        for v, dens, registry in ends:
            registry[r] = len(edges)
            if r in sset:
                edges.append((rnode(r), vnode(v)))
            else:
                edges.append((vnode(v), rnode(r)))
            costs.append(qcost_edge(dens))

    shortest: dict[tuple[str, str], float] = {}
    for road in rmap.roads:
        if road.is_loop:
            continue
        key = (road.tail, road.head) if road.tail <= road.head else (road.head, road.tail)
        if key not in shortest or road.length < shortest[key]:
            shortest[key] = road.length
    routing = []
    for (u, v), w in shortest.items():
        for a, b in ((u, v), (v, u)):
            routing.append(len(edges))
            edges.append((vnode(a), vnode(b)))
            costs.append(LinearCost(w))

    net = FlowNetwork(tuple(nodes), tuple(edges), supply)
    return WassersteinNetwork(net, costs, rmap, S, D, T, tconn, hconn, routing, active)


@dataclass
class EmdResult:
    value: float
    flow: np.ndarray
    network: WassersteinNetwork
    instance: PreparedInstance
    gap: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def emd_exact(
    rmap: RoadMap, src: Measure, dst: Measure, tol: float = DEFAULT_TOL, max_iter: int = 100_000
) -> EmdResult:
    """Earth Mover's distance between two measures on a road map.

    Runs min-subtraction, road cracking (also isolating zero-density
    stretches so every decision cost is smooth), network construction and
    the convex flow solver.  ``value`` is within ``tol`` of the optimum when
    ``converged`` is true; otherwise the partial result is returned and a
    warning logged.
    """
    inst = prepare_instance(rmap, src, dst, split_gaps=True)
    netw = build_wasserstein_network(inst.roadmap, inst.src, inst.dst)
    sol: ConvexSolution = min_cost_flow_convex(netw.network, netw.costs, tol=tol, max_iter=max_iter)
    if not sol.converged:
        log.warning("EMD solve did not reach tol %.3g (gap %.3g)", tol, sol.gap)
    diag = {
        "gap": sol.gap,
        "iterations": sol.iterations,
        "active_set": sol.active_set_size,
        "nodes": netw.network.num_nodes,
        "edges": netw.network.num_edges,
        "supply_roads": len(netw.supply_roads),
        "demand_roads": len(netw.demand_roads),
    }
    return EmdResult(sol.cost, sol.flow, netw, inst, sol.gap, sol.iterations, sol.converged, diag)


# ------------------------------------------------------------ interpretation


@dataclass
class RoadSplit:
    road: str
    kind: str  # "supply" or "demand"
    split: float
    to_tail: float
    to_head: float


@dataclass
class TransportPath:
    origin: str
    destination: str
    via: tuple[str, ...]
    volume: float


@dataclass
class TransportReport:
    splits: dict[str, RoadSplit]
    paths: list[TransportPath]

    def lines(self) -> list[str]:
        out = []
        for s in self.splits.values():
            verb = "sends" if s.kind == "supply" else "receives"
            out.append(
                f"{s.kind} road {s.road}: split at y*={s.split:.6g}, "
                f"{verb} {s.to_tail:.6g} via tail and {s.to_head:.6g} via head"
            )
        for p in self.paths:
            out.append(f"{p.origin} -> {p.destination} via {'-'.join(p.via)}: {p.volume:.6g}")
        return out


def interpret_flow(netw: WassersteinNetwork, flow) -> TransportReport:
    """Read split points and supply-to-demand routes off an admissible flow."""
    f = np.asarray(flow, dtype=float)
    ok, viol = check_admissible(netw.network, f)
    if not ok:
        raise FlowError(f"flow is not admissible (violation {viol:.3g})")
    splits = {}
    sset = set(netw.supply_roads)
    for r, phi in netw.active_density.items():
        xt, xh = float(f[netw.tconn[r]]), float(f[netw.hconn[r]])
        y = M.inverse_cdf(phi, min(max(xt, 0.0), phi.total))
        splits[r] = RoadSplit(r, "supply" if r in sset else "demand", y, xt, xh)
    paths = []
    for term in decompose_paths(netw.network, f, tol=1e-12).paths:
        labels = [n[1] for n in term.nodes]
        paths.append(TransportPath(labels[0], labels[-1], tuple(labels), term.volume))
    return TransportReport(splits, paths)
