"""Uncapacitated flow networks and min-cost flow solvers.

Edges are identified by their position in ``FlowNetwork.edges``; a flow is a
float array indexed the same way.  Two solvers are provided:

``min_cost_flow_linear``
    successive shortest paths with vertex potentials, for nonnegative
    linear weights.  Returns the potentials as an optimality certificate.
``min_cost_flow_convex``
    Frank-Wolfe (pairwise variant) with the linear solver as oracle, for
    separable convex edge costs with nonnegative subgradients.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import math
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

log = logging.getLogger(__name__)

BALANCE_TOL = 1e-9
ZERO_FLOW = 1e-12


class FlowError(ValueError):
    pass


class InfeasibleError(FlowError):
    pass


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Directed multigraph with vertex supplies (positive = supply)."""

    nodes: tuple[Hashable, ...]
    edges: tuple[tuple[Hashable, Hashable], ...]
    supply: Mapping[Hashable, float]

    def __post_init__(self):
        index = {u: i for i, u in enumerate(self.nodes)}
        if len(index) != len(self.nodes):
            raise FlowError("duplicate node identifiers")
        for k, (u, v) in enumerate(self.edges):
            if u not in index or v not in index:
                raise FlowError(f"edge {k} ({u!r}, {v!r}) references an unknown node")
        for u in self.supply:
            if u not in index:
                raise FlowError(f"supply given for unknown node {u!r}")
        object.__setattr__(self, "index", index)
        tails = np.array([index[u] for u, _ in self.edges], dtype=np.intp)
        heads = np.array([index[v] for _, v in self.edges], dtype=np.intp)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        b = np.zeros(len(self.nodes))
        for u, s in self.supply.items():
            b[index[u]] += float(s)
        object.__setattr__(self, "b", b)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def imbalance(self) -> float:
        return float(self.b.sum())

    def total_supply(self) -> float:
        return float(self.b[self.b > 0].sum())

    def balanced_supplies(self) -> np.ndarray:
        """Supplies with a sub-tolerance imbalance repaired by scaling demands."""
        b = self.b.copy()
        pos, neg = b[b > 0].sum(), -b[b < 0].sum()
        if abs(pos - neg) > BALANCE_TOL * max(1.0, pos):
            raise InfeasibleError(f"supplies do not balance: {pos} supplied vs {neg} demanded")
        if neg > 0:
            b[b < 0] *= pos / neg
        return b


# ---------------------------------------------------------------- edge costs


@dataclass(frozen=True)
class LinearCost:
    weight: float

    def value(self, x: float) -> float:
        return self.weight * x

    def derivative(self, x: float) -> float:
        return self.weight


@dataclass(frozen=True)
class ConvexCost:
    """Convex cost on ``[0, x_max]`` given by value and subgradient oracles.

    ``breakpoints`` lists the flow values where the subgradient formula
    changes.  When given, the subgradient must be affine between them (a
    piecewise-quadratic cost) and line searches are solved exactly.
    """

    value_fn: Callable[[float], float]
    derivative_fn: Callable[[float], float]
    x_max: float
    breakpoints: tuple[float, ...] | None = None

    def _clip(self, x: float) -> float:
        if x < -1e-9 or x > self.x_max + 1e-9 * max(1.0, self.x_max):
            raise FlowError(f"flow {x} outside cost domain [0, {self.x_max}]")
        return min(max(x, 0.0), self.x_max)

    def value(self, x: float) -> float:
        return self.value_fn(self._clip(x))

    def derivative(self, x: float) -> float:
        return self.derivative_fn(self._clip(x))


EdgeCost = Union[LinearCost, ConvexCost]


def _as_costs(costs) -> list[EdgeCost]:
    out = []
    for c in costs:
        if isinstance(c, (LinearCost, ConvexCost)):
            out.append(c)
        else:
            out.append(LinearCost(float(c)))
    return out


# ------------------------------------------------------------ basic checks


def check_admissible(net: FlowNetwork, flow, tol: float = BALANCE_TOL) -> tuple[bool, float]:
    """Flow conservation check.  Returns ``(ok, max violation)``."""
    f = np.asarray(flow, dtype=float)
    if f.shape != (net.num_edges,):
        raise FlowError(f"flow has shape {f.shape}, network has {net.num_edges} edges")
    if np.any(f < -tol):
        return False, float(-f.min())
    net_out = np.zeros(net.num_nodes)
    np.add.at(net_out, net.tails, f)
    np.add.at(net_out, net.heads, -f)
    viol = float(np.max(np.abs(net.b - net_out))) if net.num_nodes else 0.0
    return viol <= tol, viol


def flow_cost(net: FlowNetwork, flow, costs: Sequence) -> float:
    f = np.asarray(flow, dtype=float)
    cs = _as_costs(costs)
    if len(cs) != net.num_edges:
        raise FlowError("one cost per edge required")
    return math.fsum(c.value(float(x)) for c, x in zip(cs, f))


def reduced_costs(net: FlowNetwork, weights, potentials) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    p = np.asarray(potentials, dtype=float)
    return w + p[net.tails] - p[net.heads]


def certificate_violation(net: FlowNetwork, weights, flow, potentials) -> float:
    """Largest breach of the complementary-slackness optimality conditions.

    Conditions: reduced cost >= 0 on every edge and == 0 wherever flow > 0.
    """
    rc = reduced_costs(net, weights, potentials)
    f = np.asarray(flow, dtype=float)
    neg = float(np.max(-rc, initial=0.0))
    on_support = rc[f > 1e-9]
    slack = float(np.max(np.abs(on_support), initial=0.0))
    return max(neg, slack)


# ----------------------------------------------------- linear min-cost flow


@dataclass
class LinearSolution:
    flow: np.ndarray
    potentials: np.ndarray
    cost: float
    augmentations: int


def _adjacency(net: FlowNetwork) -> tuple[list[list[int]], list[list[int]]]:
    out_edges: list[list[int]] = [[] for _ in range(net.num_nodes)]
    in_edges: list[list[int]] = [[] for _ in range(net.num_nodes)]
    for k in range(net.num_edges):
        out_edges[net.tails[k]].append(k)
        in_edges[net.heads[k]].append(k)
    return out_edges, in_edges


def min_cost_flow_linear(net: FlowNetwork, weights, *, adjacency=None) -> LinearSolution:
    """Min-cost flow under nonnegative linear weights (no capacities).

    Successive shortest paths: every round runs Dijkstra from all nodes with
    remaining excess on reduced costs, augments to the nearest node with
    remaining deficit, then updates potentials.  Ties go to the lowest edge id.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (net.num_edges,):
        raise FlowError("one weight per edge required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise FlowError("weights must be finite and nonnegative")
    excess = net.balanced_supplies()
    n = net.num_nodes
    scale = max(1.0, float(np.abs(excess).sum()))
    tiny = ZERO_FLOW * scale
    flow = np.zeros(net.num_edges)
    pot = np.zeros(n)
    out_edges, in_edges = adjacency or _adjacency(net)
    tails, heads = net.tails.tolist(), net.heads.tolist()
    wl = w.tolist()
    rounds = 0

    while True:
        sources = [u for u in range(n) if excess[u] > tiny]
        if not sources:
            break
        dist = [math.inf] * n
        pred: list[tuple[int, int] | None] = [None] * n  # (edge, +1 fwd / -1 rev)
        done = [False] * n
        heap = []
        for u in sources:
            dist[u] = 0.0
            heap.append((0.0, u))
        heapq.heapify(heap)
        target = -1
        potl = pot.tolist()
        fl = flow
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if excess[u] < -tiny:
                target = u
                break
            pu = potl[u]
            for k in out_edges[u]:
                v = heads[k]
                if done[v]:
                    continue
                rc = wl[k] + pu - potl[v]
                nd = d + (rc if rc > 0 else 0.0)
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = (k, 1)
                    heapq.heappush(heap, (nd, v))
            for k in in_edges[u]:
                if fl[k] <= tiny:
                    continue
                v = tails[k]
                if done[v]:
                    continue
                rc = -wl[k] + pu - potl[v]
                nd = d + (rc if rc > 0 else 0.0)
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = (k, -1)
                    heapq.heappush(heap, (nd, v))
        if target < 0:
            raise InfeasibleError("remaining demand is unreachable from any supply")

        dt = dist[target]
        for v in range(n):
            pot[v] += dist[v] if dist[v] < dt else dt

        # trace back, find bottleneck
        path = []
        v = target
        delta = -excess[target]
        while pred[v] is not None:
            k, sgn = pred[v]
            path.append((k, sgn))
            if sgn < 0:
                delta = min(delta, flow[k])
            v = tails[k] if sgn > 0 else heads[k]
        delta = min(delta, excess[v])
        for k, sgn in path:
            flow[k] += sgn * delta
            if flow[k] < 0:
                flow[k] = 0.0
        excess[v] -= delta
        excess[target] += delta
        rounds += 1

    flow[flow < tiny] = 0.0
    return LinearSolution(flow, pot, float(np.dot(w, flow)), rounds)


# ---------------------------------------------------------- decomposition


@dataclass(frozen=True)
class PathTerm:
    edges: tuple[int, ...]
    nodes: tuple[Hashable, ...]
    volume: float
    is_cycle: bool = False


@dataclass
class PathCycleFlow:
    terms: list[PathTerm] = field(default_factory=list)

    @property
    def paths(self) -> list[PathTerm]:
        return [t for t in self.terms if not t.is_cycle]

    @property
    def cycles(self) -> list[PathTerm]:
        return [t for t in self.terms if t.is_cycle]

    def arc_flow(self, num_edges: int) -> np.ndarray:
        f = np.zeros(num_edges)
        for t in self.terms:
            for k in t.edges:
                f[k] += t.volume
        return f


def decompose_paths(net: FlowNetwork, flow, tol: float = 1e-12) -> PathCycleFlow:
    """Peel an admissible flow into supply-to-demand paths and cycles."""
    ok, viol = check_admissible(net, flow)
    if not ok:
        raise FlowError(f"flow is not admissible (violation {viol:.3g})")
    rem = np.array(flow, dtype=float)
    excess = net.b.copy()
    out_edges, _ = _adjacency(net)
    tails, heads = net.tails, net.heads
    result = PathCycleFlow()

    def next_edge(u: int) -> int | None:
        for k in out_edges[u]:
            if rem[k] > tol:
                return k
        return None

    def walk(start: int, stop_at_demand: bool) -> None:
        nodes, edges, seen = [start], [], {start: 0}
        u = start
        while True:
            if stop_at_demand and edges and excess[u] < -tol:
                vol = min(excess[start], -excess[u], min(rem[k] for k in edges))
                for k in edges:
                    rem[k] -= vol
                excess[start] -= vol
                excess[u] += vol
                result.terms.append(PathTerm(tuple(edges), tuple(net.nodes[i] for i in nodes), vol))
                return
            k = next_edge(u)
            if k is None:
                # only sub-tolerance residue left along this walk
                for e in edges:
                    rem[e] = 0.0 if rem[e] <= 1e3 * tol else rem[e]
                if stop_at_demand:
                    excess[start] = 0.0
                return
            v = int(heads[k])
            edges.append(k)
            if v in seen:
                i = seen[v]
                cyc = edges[i:]
                vol = min(rem[e] for e in cyc)
                for e in cyc:
                    rem[e] -= vol
                cyc_nodes = tuple(net.nodes[j] for j in nodes[i:]) + (net.nodes[v],)
                result.terms.append(PathTerm(tuple(cyc), cyc_nodes, vol, is_cycle=True))
                return
            seen[v] = len(nodes)
            nodes.append(v)
            u = v

    for s in range(net.num_nodes):
        while excess[s] > tol:
            walk(s, stop_at_demand=True)
    for s in range(net.num_nodes):
        while next_edge(s) is not None:
            walk(s, stop_at_demand=False)
    return result


# ----------------------------------------------------- convex min-cost flow


@dataclass
class ConvexSolution:
    flow: np.ndarray
    cost: float
    gap: float
    iterations: int
    converged: bool
    active_set_size: int = 0


def _line_search(x, d, costs, gmax, exact_ok) -> float:
    """Minimise ``sum c_e(x_e + g d_e)`` over ``g in [0, gmax]``."""
    moving = np.nonzero(np.abs(d) > 0)[0]

    def slope(g: float) -> float:
        return math.fsum(d[e] * costs[e].derivative(x[e] + g * d[e]) for e in moving)

    if slope(0.0) >= 0:
        return 0.0
    if slope(gmax) <= 0:
        return gmax
    if exact_ok:
        pts = {0.0, gmax}
        for e in moving:
            c = costs[e]
            if isinstance(c, ConvexCost):
                for bp in c.breakpoints:
                    g = (bp - x[e]) / d[e]
                    if 0.0 < g < gmax:
                        pts.add(g)
        grid = sorted(pts)
        for a, b in zip(grid, grid[1:]):
            if b - a <= 1e-15 * max(1.0, gmax):
                continue
            # slope is affine on (a, b); sample two interior points
            g1, g2 = a + (b - a) / 3, a + 2 * (b - a) / 3
            s1, s2 = slope(g1), slope(g2)
            if g2 <= g1:
                continue
            k = (s2 - s1) / (g2 - g1)
            sa, sb = s1 + k * (a - g1), s1 + k * (b - g1)
            if sb >= 0:
                if sa >= 0:
                    return a
                return min(max(a - sa / k, a), b) if k > 0 else b
        return gmax
    lo, hi = 0.0, gmax
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _local_affine(c: EdgeCost, x: float) -> tuple[float, float]:
    """Slope ``h`` and offset ``c0`` of the subgradient ``h*x + c0`` near ``x``."""
    if isinstance(c, LinearCost):
        return 0.0, c.weight
    grid = [0.0, *c.breakpoints, c.x_max]
    k = max(0, min(bisect.bisect_right(grid, x) - 1, len(grid) - 2))
    a, b = grid[k], grid[k + 1]
    if b - a <= 0:
        return 0.0, c.derivative(x)
    p1, p2 = a + (b - a) / 3, a + 2 * (b - a) / 3
    g1, g2 = c.derivative(p1), c.derivative(p2)
    h = (g2 - g1) / (p2 - p1)
    return h, g1 - h * p1


def _polish(net: FlowNetwork, cs: list[EdgeCost], x: np.ndarray, rounds: int = 5) -> np.ndarray | None:
    """Solve the KKT system of the quadratic model on the current support.

    Costs are treated as quadratic on the piece each edge currently sits
    on; edges leaving the nonnegative orthant are dropped and the solve is
    repeated.  The caller must certify the returned point.
    """
    scale = max(1.0, net.total_supply())
    support = np.nonzero(x > 1e-10 * scale)[0]
    b = net.balanced_supplies()
    n = net.num_nodes
    for _ in range(rounds):
        if len(support) == 0:
            return None
        m = len(support)
        K = np.zeros((m + n, m + n))
        rhs = np.zeros(m + n)
        for i, e in enumerate(support):
            h, c0 = _local_affine(cs[e], float(x[e]))
            K[i, i] = h
            K[i, m + net.tails[e]] = -1.0
            K[i, m + net.heads[e]] = 1.0
            rhs[i] = -c0
            K[m + net.tails[e], i] = 1.0
            K[m + net.heads[e], i] = -1.0
        rhs[m:] = b
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        xs = sol[:m]
        neg = xs < -1e-13 * scale
        if not neg.any():
            y = np.zeros_like(x)
            y[support] = np.maximum(xs, 0.0)
            return y
        support = support[~neg]
    return None


def min_cost_flow_convex(
    net: FlowNetwork,
    costs: Sequence,
    tol: float = 1e-7,
    max_iter: int = 100_000,
    polish_every: int = 10,
) -> ConvexSolution:
    """Min-cost flow under separable convex costs, certified by duality gap.

    Pairwise Frank-Wolfe over the polytope of admissible flows bounded by
    the total supply on every edge.  The linear oracle is
    :func:`min_cost_flow_linear` on the current subgradients; its solutions
    are acyclic whenever every directed cycle has positive weight, so they
    respect the edge bound.  Stops when the Frank-Wolfe gap, an upper bound
    on the suboptimality, drops to ``tol``.

    For piecewise-quadratic costs every ``polish_every`` iterations the
    quadratic model on the current support is solved exactly; the result is
    accepted only if its own Frank-Wolfe gap is within ``tol``.
    """
    cs = _as_costs(costs)
    if len(cs) != net.num_edges:
        raise FlowError("one cost per edge required")
    exact_ok = all(isinstance(c, LinearCost) or c.breakpoints is not None for c in cs)
    adjacency = _adjacency(net)

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.array([c.derivative(float(v)) for c, v in zip(cs, x)])
        if np.any(g < 0):
            raise FlowError("subgradients must be nonnegative")
        return g

    def oracle(g: np.ndarray) -> np.ndarray:
        return min_cost_flow_linear(net, g, adjacency=adjacency).flow

    def try_polish(x: np.ndarray) -> tuple[np.ndarray, float] | None:
        y = _polish(net, cs, x)
        if y is None or not check_admissible(net, y)[0]:
            return None
        if np.any(y > net.total_supply() * (1 + 1e-9)):
            return None
        try:
            gy = grad(y)
        except FlowError:
            return None
        return y, float(np.dot(gy, y - oracle(gy)))

    x = oracle(grad(np.zeros(net.num_edges)))
    atoms: dict[bytes, list] = {x.tobytes(): [x, 1.0]}
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(x)
        s = oracle(g)
        gap = float(np.dot(g, x - s))
        if gap <= tol:
            break
        if exact_ok and it % polish_every == 0:
            polished = try_polish(x)
            if polished is not None and polished[1] <= tol:
                x, gap = polished
                break
        key_s = s.tobytes()
        # away atom: the active vertex most aligned with the gradient
        key_v, (v, alpha_v) = max(atoms.items(), key=lambda kv: float(np.dot(g, kv[1][0])))
        pairwise = key_v != key_s
        if pairwise:
            d, gmax = s - v, alpha_v
        else:
            d, gmax = s - x, 1.0
        step = _line_search(x, d, cs, gmax, exact_ok)
        if step <= 0.0 and pairwise:
            pairwise = False
            d, gmax = s - x, 1.0
            step = _line_search(x, d, cs, gmax, exact_ok)
        if step <= 0.0:
            log.debug("line search stalled at gap %.3g", gap)
            break
        x = x + step * d
        np.maximum(x, 0.0, out=x)
        if pairwise:
            atoms[key_v][1] -= step
            if atoms[key_v][1] <= 1e-14:
                del atoms[key_v]
        else:
            for a in atoms.values():
                a[1] *= 1.0 - step
            for k in [k for k, a in atoms.items() if a[1] <= 1e-14]:
                del atoms[k]
        atoms.setdefault(key_s, [s, 0.0])[1] += step
    else:
        g = grad(x)
        gap = float(np.dot(g, x - oracle(g)))
    converged = gap <= tol
    if not converged:
        log.warning("convex flow solver stopped with gap %.3g > tol %.3g", gap, tol)
    return ConvexSolution(x, flow_cost(net, x, cs), gap, it, converged, len(atoms))
