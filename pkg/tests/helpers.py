"""Random instance generators and independent oracles shared by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from roademd import measures as M
from roademd.dpdp import random_roadmap
from roademd.flow import FlowNetwork
from roademd.instance import fixture_path, load
from roademd.measures import Measure, PiecewiseConstantDensity
from roademd.roadmap import RoadMap, validate_roadmap

SQUARE_W = 31 / 30


def square():
    inst = load(fixture_path("square.json"))
    return inst.roadmap, inst.src, inst.dst


def square_pmf():
    return load(fixture_path("square.json")).pmf


def random_density(rng: np.random.Generator, length: float, max_pieces: int = 4,
                   zero_prob: float = 0.25) -> PiecewiseConstantDensity:
    k = int(rng.integers(1, max_pieces + 1))
    widths = rng.uniform(0.2, 1.0, k)
    cum = np.cumsum(widths) / widths.sum() * length
    bps = [0.0, *cum[:-1].tolist(), length]
    vals = rng.uniform(0.1, 2.0, k)
    vals[rng.uniform(size=len(vals)) < zero_prob] = 0.0
    if not vals.any():
        vals[int(rng.integers(len(vals)))] = 1.0
    return PiecewiseConstantDensity(tuple(bps), tuple(vals.tolist()))


def random_measure(rng, rmap: RoadMap, frac: float = 0.6, max_pieces: int = 4) -> Measure:
    roads = [r for r in rmap.roads if rng.uniform() < frac] or [rmap.roads[int(rng.integers(len(rmap.roads)))]]
    return Measure({r.id: random_density(rng, r.length, max_pieces) for r in roads})


def normalize(m: Measure, total: float = 1.0) -> Measure:
    return M.scale(m, total / M.total(m))


def random_instance(seed: int, max_roads: int = 5, max_pieces: int = 3):
    """Random connected map with two equal-mass piecewise-constant measures."""
    rng = np.random.default_rng(seed)
    rmap = random_roadmap(rng, 1, max_roads)
    src = normalize(random_measure(rng, rmap, max_pieces=max_pieces))
    dst = normalize(random_measure(rng, rmap, max_pieces=max_pieces))
    return rmap, src, dst


# ------------------------------------------------------------ R^1 oracle


def path_instance(seed: int, max_roads: int = 5, max_pieces: int = 4):
    """Roads chained along a line, each with a random orientation.

    Returns the map, two equal-mass measures and, per road, its offset on
    the line and orientation (+1 tail-to-head along the line, -1 reversed).
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_roads + 1))
    lengths = rng.uniform(0.3, 2.0, n)
    verts = [f"x{i}" for i in range(n + 1)]
    roads, layout = [], {}
    offset = 0.0
    for i in range(n):
        rid = f"r{i}"
        if rng.uniform() < 0.5:
            roads.append((rid, verts[i], verts[i + 1], float(lengths[i])))
            layout[rid] = (offset, 1)
        else:
            roads.append((rid, verts[i + 1], verts[i], float(lengths[i])))
            layout[rid] = (offset, -1)
        offset += float(lengths[i])
    rmap = validate_roadmap(verts, roads)
    src = normalize(random_measure(rng, rmap, 0.6, max_pieces))
    dst = normalize(random_measure(rng, rmap, 0.6, max_pieces))
    return rmap, src, dst, layout


def _line_pieces(m: Measure, rmap: RoadMap, layout):
    """Measure as (start, end, density) pieces on the line."""
    out = []
    for r, d in m.items():
        off, sgn = layout[r]
        L = rmap.road(r).length
        for a, b, v in zip(d.breakpoints, d.breakpoints[1:], d.values):
            if v > 0:
                lo, hi = (off + a, off + b) if sgn > 0 else (off + L - b, off + L - a)
                out.append((lo, hi, v))
    return out


def line_emd(rmap: RoadMap, src: Measure, dst: Measure, layout) -> float:
    """Integral of |F_src - F_dst| along the line, integrated exactly."""
    ps, pd = _line_pieces(src, rmap, layout), _line_pieces(dst, rmap, layout)
    grid = sorted({0.0, *(x for p in ps + pd for x in p[:2])})

    def F(pieces, x):
        return math.fsum(v * (min(max(x, a), b) - a) for a, b, v in pieces)

    total = 0.0
    for a, b in zip(grid, grid[1:]):
        ga = F(ps, a) - F(pd, a)
        gb = F(ps, b) - F(pd, b)
        h = b - a
        if ga * gb >= 0:
            total += 0.5 * h * (abs(ga) + abs(gb))
        else:  # linear difference crosses zero inside the interval
            total += 0.5 * h * (ga * ga + gb * gb) / (abs(ga) + abs(gb))
    return total


# ----------------------------------------------------- LP vertex enumeration


def lp_vertex_enumeration(tails, heads, b, w) -> float:
    """Min of w.x over {incidence x = b, x >= 0} by trying every basis."""
    n, E = len(b), len(w)
    A = np.zeros((n, E))
    for k, (u, v) in enumerate(zip(tails, heads)):
        A[u, k] += 1.0
        A[v, k] -= 1.0
    rank = np.linalg.matrix_rank(A)
    rows = list(range(n))
    # pick independent rows once
    sel = []
    for i in rows:
        if np.linalg.matrix_rank(A[sel + [i]]) > len(sel):
            sel.append(i)
        if len(sel) == rank:
            break
    Ar, br = A[sel], np.asarray(b)[sel]
    best = math.inf
    for cols in itertools.combinations(range(E), rank):
        B = Ar[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, br)
        if np.any(xb < -1e-12):
            continue
        x = np.zeros(E)
        x[list(cols)] = xb
        if np.max(np.abs(A @ x - b)) > 1e-9:
            continue
        best = min(best, float(np.dot(w, x)))
    return best


def random_network(rng, n_nodes, n_edges, n_terminals=None):
    """Strongly connected random digraph with balanced random supplies."""
    nodes = list(range(n_nodes))
    edges = [(i, (i + 1) % n_nodes) for i in range(n_nodes)] if n_nodes > 1 else []
    while len(edges) < n_edges:
        u, v = rng.integers(0, n_nodes, 2)
        if u != v:
            edges.append((int(u), int(v)))
    k = n_terminals or n_nodes
    chosen = rng.choice(n_nodes, size=min(k, n_nodes), replace=False)
    b = np.zeros(n_nodes)
    b[chosen] = rng.uniform(-1, 1, len(chosen))
    b[chosen] -= b[chosen].mean()
    w = rng.uniform(0, 3, len(edges))
    net = FlowNetwork(tuple(nodes), tuple(edges), {i: float(b[i]) for i in nodes})
    return net, w
