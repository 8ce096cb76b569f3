"""Approximation schemes that bracket and converge to the exact EMD.

Both schemes cut every road into ``ceil(L / eps)`` equal cells.

* The bipartite scheme joins every supply cell to every demand cell, with
  the smallest (lower bound) or a certified largest (upper bound) distance
  between the two cells as weight.
* The path scheme replaces each non-empty road by a chain of its cells
  ("device") with edges of weight ``L / N`` and keeps the routing edges of
  the exact network.  Its min-cost flow equals the bipartite lower bound
  with ``O(1/eps)`` instead of ``O(1/eps^2)`` edges.
"""

from __future__ import annotations

import math
from collections.abc import Hashable
from dataclasses import dataclass

import numpy as np

from . import measures as M
from .emd_exact import (
    OverlapError,
    PreparedInstance,
    UnequalMassError,
    classify_roads,
    prepare_instance,
    vnode,
)
from .flow import FlowNetwork, LinearSolution, min_cost_flow_linear
from .measures import Measure
from .roadmap import RoadMap, VertexDistances, vertex_distances

ZERO_FLOW = 1e-9


class PartingError(RuntimeError):
    """An optimal path-network flow failed to part a road device."""


@dataclass(frozen=True)
class Cell:
    road: str
    index: int  # 0-based, tail to head
    a: float
    b: float

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass
class Tessellation:
    epsilon: float
    cells: dict[str, list[Cell]]

    @property
    def num_cells(self) -> int:
        return sum(len(c) for c in self.cells.values())

    def cell_length(self, road: str) -> float:
        return self.cells[road][0].length

    def masses(self, m: Measure, road: str, length: float) -> np.ndarray:
        d = m.density(road, length)
        cum = np.array([M.cdf(d, c.a) for c in self.cells[road]] + [M.cdf(d, length)])
        return np.maximum(np.diff(cum), 0.0)


def tessellate(rmap: RoadMap, epsilon: float) -> Tessellation:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    cells = {}
    for r in rmap.roads:
        # guard against L/eps landing just above an integer through roundoff
        n = max(1, math.ceil(r.length / epsilon - 1e-9))
        h = r.length / n
        cells[r.id] = [Cell(r.id, k, k * h, r.length if k == n - 1 else (k + 1) * h) for k in range(n)]
    return Tessellation(epsilon, cells)


def cell_distance_bounds(
    rmap: RoadMap, dists: VertexDistances, c1: Cell, c2: Cell
) -> tuple[float, float]:
    """Lower and upper bounds on the distance between points of two cells.

    ``lower`` is the exact minimum.  ``upper`` is the minimum over routes of
    each route's largest length, which bounds the true maximum from above
    and exceeds ``lower`` by at most the sum of the two cell lengths.
    """
    r1, r2 = rmap.road(c1.road), rmap.road(c2.road)
    lo, hi = math.inf, math.inf
    if r1.id == r2.id:
        lo = max(0.0, c2.a - c1.b, c1.a - c2.b)
        hi = max(abs(c2.b - c1.a), abs(c1.b - c2.a))
    # (vertex, nearest side, farthest side) per end of each cell
    ends1 = ((r1.tail, c1.a, c1.b), (r1.head, r1.length - c1.b, r1.length - c1.a))
    ends2 = ((r2.tail, c2.a, c2.b), (r2.head, r2.length - c2.b, r2.length - c2.a))
    for e1, n1, f1 in ends1:
        for e2, n2, f2 in ends2:
            d = dists(e1, e2)
            lo = min(lo, n1 + d + n2)
            hi = min(hi, f1 + d + f2)
    return lo, hi


@dataclass
class ApproxNetwork:
    network: FlowNetwork
    lower: np.ndarray
    upper: np.ndarray
    supply_cells: list[Cell]
    demand_cells: list[Cell]
    tessellation: Tessellation


def build_approx_network(
    rmap: RoadMap, src: Measure, dst: Measure, epsilon: float, mass_tol: float = 1e-15
) -> ApproxNetwork:
    tess = tessellate(rmap, epsilon)
    dists = vertex_distances(rmap)
    sup: list[tuple[Cell, float]] = []
    dem: list[tuple[Cell, float]] = []
    for r in rmap.roads:
        if r.id in src:
            for c, m in zip(tess.cells[r.id], tess.masses(src, r.id, r.length)):
                if m > mass_tol:
                    sup.append((c, float(m)))
        if r.id in dst:
            for c, m in zip(tess.cells[r.id], tess.masses(dst, r.id, r.length)):
                if m > mass_tol:
                    dem.append((c, float(m)))
    nodes: list[Hashable] = [("s", c.road, c.index) for c, _ in sup]
    nodes += [("d", c.road, c.index) for c, _ in dem]
    supply = {("s", c.road, c.index): m for c, m in sup}
    supply.update({("d", c.road, c.index): -m for c, m in dem})
    edges, lower, upper = [], [], []
    for cs, _ in sup:
        for cd, _ in dem:
            edges.append((("s", cs.road, cs.index), ("d", cd.road, cd.index)))
            lo, hi = cell_distance_bounds(rmap, dists, cs, cd)
            lower.append(lo)
            upper.append(hi)
    net = FlowNetwork(tuple(nodes), tuple(edges), supply)
    return ApproxNetwork(
        net, np.array(lower), np.array(upper), [c for c, _ in sup], [c for c, _ in dem], tess
    )


@dataclass
class Bounds:
    lower: float
    upper: float
    network: ApproxNetwork
    instance: PreparedInstance

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _check_totals(src: Measure, dst: Measure) -> None:
    ts, td = M.total(src), M.total(dst)
    if abs(ts - td) > 1e-9 * max(1.0, ts):
        raise UnequalMassError(f"total masses differ: {ts!r} vs {td!r}")


def emd_bounds(
    rmap: RoadMap,
    src: Measure,
    dst: Measure,
    epsilon: float,
    *,
    which: str = "both",
) -> Bounds:
    """Lower/upper EMD bounds from the bipartite cell network.

    The instance is first reduced exactly as for the path scheme
    (min-subtraction and road cracking) so the two schemes share cells.
    ``which`` may be ``"lower"``, ``"upper"`` or ``"both"``.
    """
    _check_totals(src, dst)
    inst = prepare_instance(rmap, src, dst)
    net = build_approx_network(inst.roadmap, inst.src, inst.dst, epsilon)
    lo = hi = math.nan
    if which in ("lower", "both"):
        lo = min_cost_flow_linear(net.network, net.lower).cost
    if which in ("upper", "both"):
        hi = min_cost_flow_linear(net.network, net.upper).cost
    return Bounds(lo, hi, net, inst)


# ------------------------------------------------------------ path scheme


@dataclass
class Device:
    road: str
    kind: str  # "supply" | "demand"
    cell_length: float
    # links j = 0..N join u^j and u^{j+1}; u^0 = tail vertex, u^{N+1} = head
    forward: list[int | None]
    backward: list[int | None]

    @property
    def tconn(self) -> int:
        return self.backward[0] if self.kind == "supply" else self.forward[0]

    @property
    def hconn(self) -> int:
        return self.forward[-1] if self.kind == "supply" else self.backward[-1]

    def chain_edges(self) -> list[int]:
        n = len(self.forward) - 1
        return [e for j in range(1, n) for e in (self.forward[j], self.backward[j])]


@dataclass
class PathNetwork:
    network: FlowNetwork
    weights: np.ndarray
    devices: dict[str, Device]
    routing: list[int]
    tessellation: Tessellation


def build_path_network(rmap: RoadMap, src: Measure, dst: Measure, epsilon: float) -> PathNetwork:
    """Path network for an instance with at most one measure per road."""
    _check_totals(src, dst)
    S, D, _ = classify_roads(rmap, src, dst)
    sset = set(S)
    tess = tessellate(rmap, epsilon)
    nodes: list[Hashable] = [vnode(v) for v in rmap.vertices]
    supply: dict[Hashable, float] = {}
    edges: list[tuple[Hashable, Hashable]] = []
    weights: list[float] = []
    devices: dict[str, Device] = {}

    def add(u, v, w) -> int:
        edges.append((u, v))
        weights.append(w)
        return len(edges) - 1

    for road in rmap.roads:
        r = road.id
        if r not in sset and r not in D:
            continue
        is_supply = r in sset
        meas = src if is_supply else dst
        masses = tess.masses(meas, r, road.length)
        cells = tess.cells[r]
        n, h = len(cells), tess.cell_length(r)
        ids = [("c", r, k) for k in range(n)]
        nodes.extend(ids)
        for k, m in enumerate(masses):
            supply[ids[k]] = float(m) if is_supply else -float(m)
        chain = [vnode(road.tail), *ids, vnode(road.head)]
        fwd: list[int | None] = [None] * (n + 1)
        bwd: list[int | None] = [None] * (n + 1)
        if is_supply:
            bwd[0] = add(chain[1], chain[0], 0.0)
            fwd[n] = add(chain[n], chain[n + 1], 0.0)
        else:
            fwd[0] = add(chain[0], chain[1], 0.0)
            bwd[n] = add(chain[n + 1], chain[n], 0.0)
        for j in range(1, n):
            fwd[j] = add(chain[j], chain[j + 1], h)
            bwd[j] = add(chain[j + 1], chain[j], h)
        devices[r] = Device(r, "supply" if is_supply else "demand", h, fwd, bwd)

    shortest: dict[tuple[str, str], float] = {}
    for road in rmap.roads:
        if road.is_loop:
            continue
        key = (road.tail, road.head) if road.tail <= road.head else (road.head, road.tail)
        shortest[key] = min(shortest.get(key, math.inf), road.length)
    routing = []
    for (u, v), w in shortest.items():
        routing.append(add(vnode(u), vnode(v), w))
        routing.append(add(vnode(v), vnode(u), w))

    net = FlowNetwork(tuple(nodes), tuple(edges), supply)
    return PathNetwork(net, np.array(weights), devices, routing, tess)


def parting_index(dev: Device, flow: np.ndarray, tol: float = ZERO_FLOW) -> int | None:
    """Index ``k`` of a vertex ``u^k`` parting the device, or None.

    Supply devices push mass away from the part (backward flow on its left,
    forward on its right); demand devices pull mass toward it.
    """
    n = len(dev.forward) - 1
    fwd = [j for j in range(n + 1) if dev.forward[j] is not None and flow[dev.forward[j]] > tol]
    bwd = [j for j in range(n + 1) if dev.backward[j] is not None and flow[dev.backward[j]] > tol]
    left, right = (bwd, fwd) if dev.kind == "supply" else (fwd, bwd)
    lo = max(left) + 1 if left else 1
    hi = min(right) if right else n
    lo, hi = max(lo, 1), min(hi, n)
    return lo if lo <= hi else None


def device_cost(dev: Device, flow: np.ndarray) -> float:
    return dev.cell_length * float(sum(flow[e] for e in dev.chain_edges()))


@dataclass
class PathResult:
    value: float
    flow: np.ndarray
    network: PathNetwork
    parting: dict[str, int]
    instance: PreparedInstance
    solution: LinearSolution


def emd_path(rmap: RoadMap, src: Measure, dst: Measure, epsilon: float) -> PathResult:
    """Path-scheme approximation; equals the bipartite lower bound."""
    _check_totals(src, dst)
    inst = prepare_instance(rmap, src, dst)
    pnet = build_path_network(inst.roadmap, inst.src, inst.dst, epsilon)
    sol = min_cost_flow_linear(pnet.network, pnet.weights)
    parting = {}
    for r, dev in pnet.devices.items():
        k = parting_index(dev, sol.flow)
        if k is None:
            raise PartingError(f"optimal flow does not part the device of road {r!r}")
        parting[r] = k
    return PathResult(sol.cost, sol.flow, pnet, parting, inst, sol)


__all__ = [
    "Cell",
    "Tessellation",
    "tessellate",
    "cell_distance_bounds",
    "ApproxNetwork",
    "build_approx_network",
    "Bounds",
    "emd_bounds",
    "Device",
    "PathNetwork",
    "build_path_network",
    "parting_index",
    "device_cost",
    "PathResult",
    "emd_path",
    "PartingError",
    "OverlapError",
]
