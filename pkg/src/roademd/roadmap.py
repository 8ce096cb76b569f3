"""Road networks as continuous metric spaces.

A road map is an undirected multigraph whose edges (roads) carry lengths.
Every point is addressed by ``(road, coordinate)`` with the coordinate
measured from the road's tail.  Distances are shortest roadmap distances.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Iterable, Mapping
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

if TYPE_CHECKING:
    from .measures import Measure

COORD_TOL = 1e-12


class RoadmapError(ValueError):
    """Raised for malformed road maps or addresses."""


@dataclass(frozen=True)
class Road:
    id: str
    tail: str
    head: str
    length: float

    @property
    def is_loop(self) -> bool:
        return self.tail == self.head


@dataclass(frozen=True)
class Address:
    road: str
    coord: float


@dataclass(frozen=True, eq=False)
class RoadMap:
    """Validated road network; build with :func:`validate_roadmap`."""

    vertices: tuple[str, ...]
    roads: tuple[Road, ...]

    def __post_init__(self):
        object.__setattr__(self, "_road_index", {r.id: i for i, r in enumerate(self.roads)})
        object.__setattr__(self, "_vertex_index", {v: i for i, v in enumerate(self.vertices)})

    def road(self, road_id: str) -> Road:
        try:
            return self.roads[self._road_index[road_id]]
        except KeyError:
            raise RoadmapError(f"unknown road {road_id!r}") from None

    def road_index(self, road_id: str) -> int:
        return self._road_index[road_id]

    def vertex_index(self, vertex: str) -> int:
        return self._vertex_index[vertex]

    def has_road(self, road_id: str) -> bool:
        return road_id in self._road_index

    @property
    def road_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.roads)

    @property
    def total_length(self) -> float:
        return float(sum(r.length for r in self.roads))

    def endpoints(self, road_id: str) -> tuple[str, str]:
        r = self.road(road_id)
        return r.tail, r.head

    def check_address(self, a: Address) -> Address:
        r = self.road(a.road)
        if not (-COORD_TOL <= a.coord <= r.length + COORD_TOL):
            raise RoadmapError(
                f"coordinate {a.coord} outside road {r.id!r} of length {r.length}"
            )
        return a

    def vertex_of(self, a: Address) -> str | None:
        """The vertex aliased by an endpoint address, else None."""
        r = self.road(a.road)
        if abs(a.coord) <= COORD_TOL:
            return r.tail
        if abs(a.coord - r.length) <= COORD_TOL:
            return r.head
        return None

    def same_point(self, a: Address, b: Address) -> bool:
        va, vb = self.vertex_of(a), self.vertex_of(b)
        if va is not None or vb is not None:
            return va == vb
        return a.road == b.road and abs(a.coord - b.coord) <= COORD_TOL

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-road (tail index, head index, length) arrays, in road order."""
        tails = np.array([self._vertex_index[r.tail] for r in self.roads], dtype=np.intp)
        heads = np.array([self._vertex_index[r.head] for r in self.roads], dtype=np.intp)
        lengths = np.array([r.length for r in self.roads], dtype=float)
        return tails, heads, lengths


def validate_roadmap(vertices: Iterable[Hashable], roads: Iterable) -> RoadMap:
    """Build a :class:`RoadMap`, checking lengths, references and connectivity.

    ``roads`` items are :class:`Road` instances, mappings with keys
    ``id, tail, head, length`` or 4-tuples in that order.
    """
    verts = tuple(str(v) for v in vertices)
    if len(set(verts)) != len(verts):
        raise RoadmapError("duplicate vertex identifiers")
    if not verts:
        raise RoadmapError("road map has no vertices")
    vset = set(verts)
    parsed: list[Road] = []
    for item in roads:
        if isinstance(item, Road):
            rid, tail, head, length = item.id, item.tail, item.head, item.length
        elif isinstance(item, Mapping):
            rid, tail, head, length = item["id"], item["tail"], item["head"], item["length"]
        else:
            rid, tail, head, length = item
        rid, tail, head = str(rid), str(tail), str(head)
        length = float(length)
        if not math.isfinite(length) or length <= 0:
            raise RoadmapError(f"road {rid!r} has nonpositive length {length}")
        for end in (tail, head):
            if end not in vset:
                raise RoadmapError(f"road {rid!r} references unknown vertex {end!r}")
        parsed.append(Road(rid, tail, head, length))
    ids = [r.id for r in parsed]
    if len(set(ids)) != len(ids):
        raise RoadmapError("duplicate road identifiers")

    index = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    if n > 1:
        rows = [index[r.tail] for r in parsed]
        cols = [index[r.head] for r in parsed]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp > 1:
            raise RoadmapError(f"road map is disconnected ({ncomp} components)")
    return RoadMap(verts, tuple(parsed))


@dataclass(frozen=True, eq=False)
class VertexDistances:
    """All-pairs shortest-path distances between road map vertices."""

    index: Mapping[str, int]
    matrix: np.ndarray

    def __call__(self, u: str, v: str) -> float:
        return float(self.matrix[self.index[u], self.index[v]])


def vertex_distances(rmap: RoadMap) -> VertexDistances:
    n = len(rmap.vertices)
    best = np.full((n, n), np.inf)
    for r in rmap.roads:
        if r.is_loop:
            continue
        i, j = rmap.vertex_index(r.tail), rmap.vertex_index(r.head)
        best[i, j] = best[j, i] = min(best[i, j], r.length)
    rows, cols = np.nonzero(np.isfinite(best))
    graph = csr_matrix((best[rows, cols], (rows, cols)), shape=(n, n))
    matrix = dijkstra(graph, directed=False)
    # path sums accumulate in different orders from each end
    matrix = np.minimum(matrix, matrix.T)
    np.fill_diagonal(matrix, 0.0)
    matrix.setflags(write=False)
    return VertexDistances(dict(rmap._vertex_index), matrix)


def point_distance(rmap: RoadMap, dists: VertexDistances, a: Address, b: Address) -> float:
    """Shortest roadmap distance between two addresses."""
    rmap.check_address(a)
    rmap.check_address(b)
    ra, rb = rmap.road(a.road), rmap.road(b.road)
    ya = min(max(a.coord, 0.0), ra.length)
    yb = min(max(b.coord, 0.0), rb.length)
    va, vb = rmap.vertex_of(a), rmap.vertex_of(b)
    if va is not None and vb is not None:
        return dists(va, vb)
    best = abs(ya - yb) if ra.id == rb.id else math.inf
    # d + (sa + sb) keeps the result bitwise symmetric in (a, b)
    for ea, sa in ((ra.tail, ya), (ra.head, ra.length - ya)):
        for eb, sb in ((rb.tail, yb), (rb.head, rb.length - yb)):
            best = min(best, dists(ea, eb) + (sa + sb))
    return best


def pairwise_distances(
    rmap: RoadMap,
    dists: VertexDistances,
    roads_a: np.ndarray,
    coords_a: np.ndarray,
    roads_b: np.ndarray,
    coords_b: np.ndarray,
) -> np.ndarray:
    """Elementwise distances for arrays of addresses given as road indices.

    Inputs broadcast against each other, so one side may be a scalar.
    """
    tails, heads, lengths = rmap.arrays()
    roads_a, roads_b = np.asarray(roads_a), np.asarray(roads_b)
    ya, yb = np.asarray(coords_a, dtype=float), np.asarray(coords_b, dtype=float)
    ta, ha, la = tails[roads_a], heads[roads_a], lengths[roads_a]
    tb, hb, lb = tails[roads_b], heads[roads_b], lengths[roads_b]
    d = dists.matrix
    out = np.where(roads_a == roads_b, np.abs(ya - yb), np.inf)
    for ea, sa in ((ta, ya), (ha, la - ya)):
        for eb, sb in ((tb, yb), (hb, lb - yb)):
            out = np.minimum(out, d[ea, eb] + (sa + sb))
    return out


@dataclass(frozen=True)
class AddressRemap:
    """Maps addresses on an original road map to a cracked one."""

    # road id -> (split coordinates incl. 0 and L, new road ids per segment)
    pieces: Mapping[str, tuple[tuple[float, ...], tuple[str, ...]]]

    def __call__(self, a: Address) -> Address:
        cuts, ids = self.pieces[a.road]
        if len(ids) == 1:
            return Address(ids[0], a.coord)
        k = int(np.searchsorted(cuts, a.coord, side="right")) - 1
        k = min(max(k, 0), len(ids) - 1)
        return Address(ids[k], min(max(a.coord - cuts[k], 0.0), cuts[k + 1] - cuts[k]))


def _split_points(
    breaks: list[float], owners: list[int], split_gaps: bool
) -> list[float]:
    # owners: +1 src, -1 dst, 0 neither
    cuts: list[float] = []
    if split_gaps:
        for k in range(1, len(owners)):
            if owners[k] != owners[k - 1]:
                cuts.append(breaks[k])
        return cuts
    current = 0
    for k, own in enumerate(owners):
        if own == 0:
            continue
        if current != 0 and own != current:
            cuts.append(breaks[k])
        current = own
    return cuts


def crack_roads(
    rmap: RoadMap,
    src: "Measure",
    dst: "Measure",
    *,
    split_gaps: bool = False,
    tol: float = 1e-12,
) -> tuple[RoadMap, "Measure", "Measure", AddressRemap]:
    """Split roads so that each one carries mass of at most one measure.

    The measures must have pointwise-disjoint supports.  Roads are split at
    the points where the carrying measure switches; with ``split_gaps`` they
    are also split wherever the density switches to or from zero, so every
    road ends up either empty or with a strictly positive density.
    """
    from .measures import Measure, merged_grid, restrict

    vertices = list(rmap.vertices)
    roads: list[Road] = []
    new_src: dict[str, object] = {}
    new_dst: dict[str, object] = {}
    pieces: dict[str, tuple[tuple[float, ...], tuple[str, ...]]] = {}

    for r in rmap.roads:
        ds, dd = src.density(r.id, r.length), dst.density(r.id, r.length)
        grid = merged_grid(ds, dd)
        owners = []
        for a, b in zip(grid[:-1], grid[1:]):
            m = 0.5 * (a + b)
            vs, vd = ds.value_at(m), dd.value_at(m)
            if vs > tol and vd > tol:
                raise RoadmapError(
                    f"measures overlap on road {r.id!r} near y={m:.6g}; "
                    "subtract their pointwise minimum first"
                )
            owners.append(1 if vs > tol else (-1 if vd > tol else 0))
        cuts = _split_points(grid, owners, split_gaps)
        if not cuts:
            roads.append(r)
            if r.id in src:
                new_src[r.id] = src[r.id]
            if r.id in dst:
                new_dst[r.id] = dst[r.id]
            pieces[r.id] = ((0.0, r.length), (r.id,))
            continue
        bounds = [0.0, *cuts, r.length]
        ends = [r.tail] + [f"{r.id}/{k}" for k in range(1, len(bounds) - 1)] + [r.head]
        vertices.extend(ends[1:-1])
        ids = []
        for k in range(len(bounds) - 1):
            rid = f"{r.id}/{k}"
            ids.append(rid)
            a, b = bounds[k], bounds[k + 1]
            roads.append(Road(rid, ends[k], ends[k + 1], b - a))
            if r.id in src:
                new_src[rid] = restrict(ds, a, b)
            if r.id in dst:
                new_dst[rid] = restrict(dd, a, b)
        pieces[r.id] = (tuple(bounds), tuple(ids))

    cracked = validate_roadmap(vertices, roads)
    return cracked, Measure(new_src).pruned(), Measure(new_dst).pruned(), AddressRemap(pieces)


def random_address(rmap: RoadMap, rng: np.random.Generator) -> Address:
    """Uniform point on the road map (road chosen proportionally to length)."""
    _, _, lengths = rmap.arrays()
    k = int(rng.choice(len(lengths), p=lengths / lengths.sum()))
    return Address(rmap.roads[k].id, float(rng.uniform(0.0, lengths[k])))


DistanceFn = Callable[[Address, Address], float]


def metric(rmap: RoadMap) -> DistanceFn:
    """Convenience closure ``D(a, b)`` over a road map."""
    dists = vertex_distances(rmap)
    return lambda a, b: point_distance(rmap, dists, a, b)
