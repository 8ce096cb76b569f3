"""Dynamic pickup-and-delivery on a road map.

Demands arrive as a Poisson process; each picks a (pickup road, delivery
road) pair from a pmf and uniform coordinates on both roads.  Unit-speed,
unit-capacity vehicles serve them under the gated multi-vehicle
nearest-neighbour policy: demands are served in batches, a batch being
everything that arrived while the previous batch was worked on, and a free
vehicle always takes the unassigned demand of the current batch whose
pickup is nearest to it.

The capacity predictor: the average vehicle time per demand is at least
``E[D(P, Q)] + W(pickup marginal, delivery marginal)``, so ``m`` vehicles
can serve at most ``m / s_bar`` demands per unit time.
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .emd_exact import DEFAULT_TOL, emd_exact
from .measures import Measure
from .roadmap import RoadMap, VertexDistances, pairwise_distances, validate_roadmap, vertex_distances

PMF_TOL = 1e-12


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DemandPmf:
    """Probabilities of (pickup road, delivery road) pairs."""

    entries: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        ents = tuple((str(p), str(q), float(w)) for p, q, w in self.entries)
        object.__setattr__(self, "entries", ents)
        if not ents:
            raise ScenarioError("pmf is empty")
        if any(w < 0 or not math.isfinite(w) for _, _, w in ents):
            raise ScenarioError("pmf probabilities must be nonnegative")
        s = math.fsum(w for _, _, w in ents)
        if abs(s - 1.0) > PMF_TOL:
            raise ScenarioError(f"pmf sums to {s!r}, not 1")

    def check(self, rmap: RoadMap) -> None:
        for p, q, _ in self.entries:
            for r in (p, q):
                if not rmap.has_road(r):
                    raise ScenarioError(f"pmf references unknown road {r!r}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([w for _, _, w in self.entries])


@dataclass(frozen=True)
class Scenario:
    roadmap: RoadMap
    pmf: DemandPmf
    vehicles: int
    rate: float
    horizon: float
    seed: int = 0

    def __post_init__(self):
        if self.vehicles < 1:
            raise ScenarioError("need at least one vehicle")
        if not self.rate > 0:
            raise ScenarioError("arrival rate must be positive")
        if not self.horizon >= 0:
            raise ScenarioError("horizon must be nonnegative")
        self.pmf.check(self.roadmap)


def marginals(pmf: DemandPmf, rmap: RoadMap) -> tuple[Measure, Measure]:
    """Pickup and delivery marginals as road-wise uniform measures."""
    pmf.check(rmap)
    pick: dict[str, float] = {}
    drop: dict[str, float] = {}
    for p, q, w in pmf.entries:
        pick[p] = pick.get(p, 0.0) + w
        drop[q] = drop.get(q, 0.0) + w
    lengths = {r.id: r.length for r in rmap.roads}
    return Measure.uniform(pick, lengths), Measure.uniform(drop, lengths)


# ----------------------------------------------- expected pickup-delivery


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float = 0.0  # 95% normal-approximation half width

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - self.half_width, self.mean + self.half_width


def _clip(poly: list[tuple[float, float]], a: float, b: float, c: float):
    """Clip a convex polygon to the half-plane ``a*y + b*z + c <= 0``."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp = a * p[0] + b * p[1] + c
        fq = a * q[0] + b * q[1] + c
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _integrate_affine(poly, c0: float, cy: float, cz: float) -> float:
    """Integral of ``c0 + cy*y + cz*z`` over a polygon (area times centroid value)."""
    if len(poly) < 3:
        return 0.0
    area = cy_ = cz_ = 0.0
    n = len(poly)
    for i in range(n):
        (y0, z0), (y1, z1) = poly[i], poly[(i + 1) % n]
        cross = y0 * z1 - y1 * z0
        area += cross
        cy_ += (y0 + y1) * cross
        cz_ += (z0 + z1) * cross
    area *= 0.5
    if abs(area) < 1e-300:
        return 0.0
    gy, gz = cy_ / (6 * area), cz_ / (6 * area)
    return abs(area) * (c0 + cy * gy + cz * gz)


def _pair_mean_distance(rmap: RoadMap, dists: VertexDistances, r1: str, r2: str) -> float:
    """Exact E[D(P, Q)] for P, Q uniform on roads r1, r2."""
    a, b = rmap.road(r1), rmap.road(r2)
    L1, L2 = a.length, b.length
    # candidate routes as affine functions c0 + cy*y + cz*z
    routes = []
    for e1, c1, s1 in ((a.tail, 0.0, 1.0), (a.head, L1, -1.0)):
        for e2, c2, s2 in ((b.tail, 0.0, 1.0), (b.head, L2, -1.0)):
            routes.append((c1 + c2 + dists(e1, e2), s1, s2))
    rect = [(0.0, 0.0), (L1, 0.0), (L1, L2), (0.0, L2)]
    if r1 == r2:
        regions = [
            (_clip(rect, -1.0, 1.0, 0.0), (0.0, 1.0, -1.0)),  # y >= z
            (_clip(rect, 1.0, -1.0, 0.0), (0.0, -1.0, 1.0)),  # z >= y
        ]
    else:
        regions = [(rect, None)]
    total = 0.0
    for poly, direct in regions:
        cands = routes + ([direct] if direct else [])
        uniq = []
        for f in cands:
            if not any(all(abs(f[i] - g[i]) <= 1e-14 for i in range(3)) for g in uniq):
                uniq.append(f)
        for k, f in enumerate(uniq):
            piece = poly
            for j, g in enumerate(uniq):
                if j == k or not piece:
                    continue
                piece = _clip(piece, f[1] - g[1], f[2] - g[2], f[0] - g[0])
            total += _integrate_affine(piece, *f)
    return total / (L1 * L2)


def sample_demands(
    rmap: RoadMap, pmf: DemandPmf, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``n`` demands as (pickup road idx, pickup coord, delivery road idx, delivery coord)."""
    pairs = rng.choice(len(pmf.entries), size=n, p=pmf.probabilities)
    pr = np.array([rmap.road_index(p) for p, _, _ in pmf.entries], dtype=np.intp)[pairs]
    qr = np.array([rmap.road_index(q) for _, q, _ in pmf.entries], dtype=np.intp)[pairs]
    _, _, lengths = rmap.arrays()
    py = rng.uniform(0.0, 1.0, n) * lengths[pr]
    qy = rng.uniform(0.0, 1.0, n) * lengths[qr]
    return pr, py, qr, qy


def expected_pd_distance(
    rmap: RoadMap,
    pmf: DemandPmf,
    method: str = "quadrature",
    *,
    n: int = 100_000,
    seed: int | None = 0,
    dists: VertexDistances | None = None,
) -> Estimate:
    """Expected pickup-to-delivery distance, by exact quadrature or Monte Carlo."""
    pmf.check(rmap)
    dists = dists or vertex_distances(rmap)
    if method == "quadrature":
        cache: dict[tuple[str, str], float] = {}
        acc = []
        for p, q, w in pmf.entries:
            if w == 0:
                continue
            key = (p, q)
            if key not in cache:
                cache[key] = _pair_mean_distance(rmap, dists, p, q)
            acc.append(w * cache[key])
        return Estimate(math.fsum(acc))
    if method in ("monte-carlo", "montecarlo", "mc"):
        if n < 2:
            raise ValueError("Monte Carlo needs n >= 2")
        rng = np.random.default_rng(seed)
        pr, py, qr, qy = sample_demands(rmap, pmf, n, rng)
        d = pairwise_distances(rmap, dists, pr, py, qr, qy)
        return Estimate(float(d.mean()), 1.96 * float(d.std(ddof=1)) / math.sqrt(n))
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ServicePrediction:
    pd_distance: float
    emd: float

    @property
    def service_time(self) -> float:
        return self.pd_distance + self.emd


def predicted_service_time(rmap: RoadMap, pmf: DemandPmf, tol: float = DEFAULT_TOL) -> ServicePrediction:
    src, dst = marginals(pmf, rmap)
    ed = expected_pd_distance(rmap, pmf, "quadrature").mean
    w = emd_exact(rmap, src, dst, tol=tol).value
    return ServicePrediction(ed, w)


def critical_rate(service_time: float, vehicles: int) -> float:
    """Arrival rate at which utilization ``rate * s_bar / m`` reaches one."""
    if service_time <= 0:
        return math.inf
    return vehicles / service_time


# ------------------------------------------------------------ simulation


@dataclass
class SimResult:
    horizon: float
    vehicles: int
    times: np.ndarray  # event times; the series holds counts right after each event
    outstanding: np.ndarray
    arrived: np.ndarray
    completed: np.ndarray
    arrival_times: np.ndarray
    completion_times: np.ndarray  # per completed demand, completion order
    service_times: np.ndarray  # busy time per completed demand (empty + loaded leg), completion order
    renewals: list[float] = field(default_factory=list)
    batches: int = 0

    @property
    def num_completed(self) -> int:
        return len(self.completion_times)

    @property
    def num_arrived(self) -> int:
        return len(self.arrival_times)

    @property
    def completion_rate(self) -> float:
        return self.num_completed / self.horizon if self.horizon > 0 else 0.0

    @property
    def final_outstanding(self) -> int:
        return self.num_arrived - self.num_completed

    @property
    def max_outstanding(self) -> int:
        return int(self.outstanding.max(initial=0))

    @property
    def mean_service_time(self) -> float:
        """Average vehicle time spent per completed demand."""
        return float(self.service_times.mean()) if len(self.service_times) else math.nan

    @property
    def throughput_service_time(self) -> float:
        """``m * T / S_T``: the per-demand time implied by the completion rate."""
        n = self.num_completed
        return self.vehicles * self.horizon / n if n else math.inf


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    # independent streams for arrival times, demand locations, vehicle starts
    ss = np.random.SeedSequence(seed)
    a, b, c = ss.spawn(3)
    return np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c)


def simulate(scenario: Scenario, dists: VertexDistances | None = None) -> SimResult:
    """Run the gated m-NN policy up to the horizon.  Deterministic per seed."""
    rmap, m, T = scenario.roadmap, scenario.vehicles, scenario.horizon
    dists = dists or vertex_distances(rmap)
    rng_arr, rng_loc, rng_init = _streams(scenario.seed)

    # Poisson arrivals on [0, T]
    arrivals: list[float] = []
    t = 0.0
    while True:
        t += rng_arr.exponential(1.0 / scenario.rate)
        if t > T:
            break
        arrivals.append(t)
    n = len(arrivals)
    pr, py, qr, qy = sample_demands(rmap, scenario.pmf, n, rng_loc)

    _, _, lengths = rmap.arrays()
    start = rng_init.choice(len(lengths), size=m, p=lengths / lengths.sum())
    veh_road = start.astype(np.intp)
    veh_pos = rng_init.uniform(0.0, 1.0, m) * lengths[veh_road]
    busy = np.zeros(m, dtype=bool)

    batch = np.empty(0, dtype=np.intp)  # demand ids of current batch
    unassigned = np.empty(0, dtype=bool)
    in_progress = 0  # assigned but not delivered, current batch
    waiting: list[int] = []

    times: list[float] = []
    outs: list[int] = []
    arr_c: list[int] = []
    comp_c: list[int] = []
    completion_times: list[float] = []
    service: list[float] = []
    renewals: list[float] = []
    events: list[tuple[float, int, int, int, float]] = []  # (time, seq, vehicle, demand, busy)
    seq = 0
    n_arrived = n_completed = 0
    batches = 0

    def dispatch(v: int, now: float) -> None:
        nonlocal seq, in_progress
        idx = np.nonzero(unassigned)[0]
        if len(idx) == 0:
            return
        ids = batch[idx]
        d = pairwise_distances(rmap, dists, veh_road[v], veh_pos[v], pr[ids], py[ids])
        j = int(np.argmin(d))  # first minimum = earliest arrival
        dem = int(ids[j])
        unassigned[idx[j]] = False
        loaded = float(pairwise_distances(rmap, dists, pr[dem], py[dem], qr[dem], qy[dem]))
        dur = float(d[j]) + loaded
        busy[v] = True
        in_progress += 1
        heapq.heappush(events, (now + dur, seq, v, dem, dur))
        seq += 1

    def start_batch(ids: list[int], now: float) -> None:
        nonlocal batch, unassigned, batches
        batch = np.array(ids, dtype=np.intp)
        unassigned = np.ones(len(ids), dtype=bool)
        batches += 1
        for v in range(m):
            if not busy[v]:
                dispatch(v, now)

    def record(now: float) -> None:
        times.append(now)
        outs.append(n_arrived - n_completed)
        arr_c.append(n_arrived)
        comp_c.append(n_completed)

    ai = 0
    while True:
        next_arr = arrivals[ai] if ai < n else math.inf
        next_done = events[0][0] if events else math.inf
        now = min(next_arr, next_done)
        if now > T or now == math.inf:
            break
        if next_done <= next_arr:
            _, _, v, dem, dur = heapq.heappop(events)
            n_completed += 1
            service.append(dur)
            in_progress -= 1
            completion_times.append(now)
            busy[v] = False
            veh_road[v], veh_pos[v] = qr[dem], qy[dem]
            if unassigned.any():
                dispatch(v, now)
            elif in_progress == 0:
                if waiting:
                    ids, waiting = waiting, []
                    start_batch(ids, now)
                else:
                    batch = np.empty(0, dtype=np.intp)
                    unassigned = np.empty(0, dtype=bool)
            record(now)
            if n_arrived == n_completed:
                renewals.append(now)
        else:
            dem = ai
            ai += 1
            n_arrived += 1
            if len(batch) == 0:
                start_batch([dem], now)
            else:
                waiting.append(dem)
            record(now)

    return SimResult(
        horizon=T,
        vehicles=m,
        times=np.array(times, dtype=float),
        outstanding=np.array(outs, dtype=int),
        arrived=np.array(arr_c, dtype=int),
        completed=np.array(comp_c, dtype=int),
        arrival_times=np.array(arrivals, dtype=float),
        completion_times=np.array(completion_times, dtype=float),
        service_times=np.array(service),
        renewals=renewals,
        batches=batches,
    )


# --------------------------------------------------- random scenario generator


def random_roadmap(rng: np.random.Generator, min_roads: int = 1, max_roads: int = 10,
                   length_range: tuple[float, float] = (0.5, 2.0)) -> RoadMap:
    """Random connected multigraph; loops and parallel roads allowed."""
    n_roads = int(rng.integers(min_roads, max_roads + 1))
    n_vertices = int(rng.integers(1, n_roads + 2))
    verts = [str(i) for i in range(n_vertices)]
    roads = []
    for i in range(1, n_vertices):  # random spanning tree first
        j = int(rng.integers(0, i))
        roads.append((f"r{len(roads)}", verts[j], verts[i]))
    while len(roads) < n_roads:
        a, b = rng.integers(0, n_vertices, size=2)
        roads.append((f"r{len(roads)}", verts[int(a)], verts[int(b)]))
    lo, hi = length_range
    return validate_roadmap(
        verts, [(rid, t, h, float(rng.uniform(lo, hi))) for rid, t, h in roads]
    )


def random_pmf(rmap: RoadMap, rng: np.random.Generator, max_pairs: int = 6) -> DemandPmf:
    ids = rmap.road_ids
    k = int(rng.integers(1, max_pairs + 1))
    pairs = {(ids[int(rng.integers(len(ids)))], ids[int(rng.integers(len(ids)))]) for _ in range(k)}
    pairs = sorted(pairs)
    w = rng.dirichlet(np.ones(len(pairs)))
    w = w / math.fsum(w)
    entries = [(p, q, float(x)) for (p, q), x in zip(pairs, w)]
    # absorb rounding so the pmf sums to one within tolerance
    s = math.fsum(x for _, _, x in entries)
    p0, q0, x0 = entries[-1]
    entries[-1] = (p0, q0, x0 + (1.0 - s))
    return DemandPmf(tuple(entries))


def random_scenario(seed: int, horizon: float = 1000.0, load: float = 2.0,
                    max_vehicles: int = 5) -> tuple[Scenario, ServicePrediction]:
    """Scenario with random map, pmf and fleet, run at ``load`` times capacity."""
    rng = np.random.default_rng(seed)
    rmap = random_roadmap(rng)
    pmf = random_pmf(rmap, rng)
    m = int(rng.integers(1, max_vehicles + 1))
    pred = predicted_service_time(rmap, pmf)
    rate = load * critical_rate(pred.service_time, m)
    return Scenario(rmap, pmf, m, rate, horizon, seed), pred


def renewals_after(result: SimResult, t: float) -> list[float]:
    return [x for x in result.renewals if x > t]


def pmf_from_table(table: Mapping[tuple[str, str], float] | Iterable[tuple[str, str, float]]) -> DemandPmf:
    items = table.items() if isinstance(table, Mapping) else [((p, q), w) for p, q, w in table]
    return DemandPmf(tuple((p, q, float(w)) for (p, q), w in items))


__all__ = [
    "DemandPmf",
    "Scenario",
    "SimResult",
    "Estimate",
    "ServicePrediction",
    "marginals",
    "expected_pd_distance",
    "predicted_service_time",
    "critical_rate",
    "simulate",
    "random_roadmap",
    "random_pmf",
    "random_scenario",
    "renewals_after",
    "pmf_from_table",
    "ScenarioError",
]
