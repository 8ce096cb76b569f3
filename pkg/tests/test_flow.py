import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog, minimize_scalar
from scipy.sparse.csgraph import shortest_path

from roademd import measures as M
from roademd.emd_exact import build_wasserstein_network, emd_exact
from roademd.flow import (
    ConvexCost,
    FlowError,
    FlowNetwork,
    InfeasibleError,
    LinearCost,
    certificate_violation,
    check_admissible,
    decompose_paths,
    flow_cost,
    min_cost_flow_convex,
    min_cost_flow_linear,
)
from roademd.measures import Measure, PiecewiseConstantDensity as Dens
from roademd.roadmap import validate_roadmap

from helpers import SQUARE_W, lp_vertex_enumeration, random_network, square

SQUARE_OPTIMAL = {
    ("2", "N"): 1 / 5, ("E", "2"): 1 / 3, ("E", "3"): 1 / 15, ("S", "4"): 3 / 5,
    ("1", "W"): 2 / 15, ("4", "W"): 2 / 3, ("2", "1"): 2 / 15, ("3", "4"): 1 / 15,
}


def square_optimal_flow(netw):
    f = np.zeros(netw.network.num_edges)
    for (a, b), v in SQUARE_OPTIMAL.items():
        f[netw.edge_by_label(a, b)] = v
    return f


def square_network():
    return build_wasserstein_network(*square())


# --------------------------------------------------------- basic checks


def test_square_optimal_flow_is_admissible_and_costs_31_30():
    netw = square_network()
    f = square_optimal_flow(netw)
    ok, viol = check_admissible(netw.network, f)
    assert ok and viol < 1e-12
    assert flow_cost(netw.network, f, netw.costs) == pytest.approx(SQUARE_W, abs=1e-12)


def test_admissibility_trivial_cases():
    net = FlowNetwork(("a", "b"), (("a", "b"),), {})
    assert check_admissible(net, [0.0]) == (True, 0.0)
    net = FlowNetwork(("a", "b"), (("a", "b"),), {"a": 0.7, "b": -0.7})
    ok, viol = check_admissible(net, [0.0])
    assert not ok and viol == pytest.approx(0.7)
    with pytest.raises(FlowError):
        check_admissible(net, [0.0, 1.0])


def test_flow_cost_trivial_cases():
    netw = square_network()
    assert flow_cost(netw.network, np.zeros(netw.network.num_edges), netw.costs) == 0
    net = FlowNetwork(("a", "b"), (("a", "b"),), {})
    assert flow_cost(net, [3.0], [2.0]) == 6.0
    with pytest.raises(FlowError):
        flow_cost(net, [3.0], [ConvexCost(lambda x: x * x, lambda x: 2 * x, 1.0)])


def test_network_validation():
    with pytest.raises(FlowError):
        FlowNetwork(("a",), (("a", "z"),), {})
    with pytest.raises(FlowError):
        FlowNetwork(("a", "a"), (), {})


# ------------------------------------------------------- linear solver


def test_linear_single_edge():
    net = FlowNetwork(("s", "t"), (("s", "t"),), {"s": 1.0, "t": -1.0})
    sol = min_cost_flow_linear(net, [5.0])
    assert sol.flow.tolist() == [1.0] and sol.cost == 5.0


def test_linear_bipartite_matching():
    net = FlowNetwork(
        ("a", "b", "x", "y"),
        (("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")),
        {"a": 1.0, "b": 1.0, "x": -1.0, "y": -1.0},
    )
    sol = min_cost_flow_linear(net, [0.0, 1.0, 1.0, 0.0])
    assert sol.cost == 0.0 and sol.flow.tolist() == [1.0, 0.0, 0.0, 1.0]


def test_linear_errors():
    net = FlowNetwork(("s", "t"), (("t", "s"),), {"s": 1.0, "t": -1.0})
    with pytest.raises(InfeasibleError):
        min_cost_flow_linear(net, [1.0])
    with pytest.raises(FlowError):
        min_cost_flow_linear(net, [-1.0])
    unbalanced = FlowNetwork(("s", "t"), (("s", "t"),), {"s": 1.0, "t": -0.5})
    with pytest.raises(InfeasibleError):
        min_cost_flow_linear(unbalanced, [1.0])


def test_linear_repairs_tiny_imbalance():
    net = FlowNetwork(("s", "t"), (("s", "t"),), {"s": 1.0, "t": -(1.0 - 1e-12)})
    sol = min_cost_flow_linear(net, [2.0])
    assert sol.cost == pytest.approx(2.0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_linear_certificate(seed):
    rng = np.random.default_rng(seed)
    net, w = random_network(rng, int(rng.integers(2, 9)), int(rng.integers(2, 20)))
    sol = min_cost_flow_linear(net, w)
    assert check_admissible(net, sol.flow)[0]
    assert certificate_violation(net, w, sol.flow, sol.potentials) <= 1e-9


@pytest.mark.parametrize("seed", range(40))
def test_linear_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    net, w = random_network(rng, n, int(rng.integers(n, n + 5)), n_terminals=min(n, 4))
    sol = min_cost_flow_linear(net, w)
    ref = lp_vertex_enumeration(net.tails, net.heads, net.b, w)
    assert sol.cost == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_linear_matches_linprog(seed):
    rng = np.random.default_rng(100 + seed)
    net, w = random_network(rng, 15, 50)
    sol = min_cost_flow_linear(net, w)
    A = np.zeros((net.num_nodes, net.num_edges))
    A[net.tails, np.arange(net.num_edges)] += 1
    A[net.heads, np.arange(net.num_edges)] -= 1
    ref = linprog(w, A_eq=A, b_eq=net.b, bounds=(0, None), method="highs")
    assert ref.status == 0
    assert sol.cost == pytest.approx(ref.fun, abs=1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_equivalent_networks_have_equal_cost(seed):
    # a network and the bipartite network of its supply-to-demand distances
    rng = np.random.default_rng(seed)
    net, w = random_network(rng, 8, 20, n_terminals=6)
    dense = np.full((8, 8), np.inf)
    for (u, v), c in zip(net.edges, w):
        dense[u, v] = min(dense[u, v], c)
    dist = shortest_path(np.where(np.isfinite(dense), dense, 0), directed=True)
    sup = [i for i in range(8) if net.b[i] > 0]
    dem = [i for i in range(8) if net.b[i] < 0]
    edges = [(("s", i), ("d", j)) for i in sup for j in dem]
    bip = FlowNetwork(
        tuple(("s", i) for i in sup) + tuple(("d", j) for j in dem),
        tuple(edges),
        {**{("s", i): net.b[i] for i in sup}, **{("d", j): net.b[j] for j in dem}},
    )
    bw = [dist[i, j] for i in sup for j in dem]
    assert min_cost_flow_linear(bip, bw).cost == pytest.approx(min_cost_flow_linear(net, w).cost, abs=1e-9)


# -------------------------------------------------------- decomposition


def test_square_optimal_decomposition():
    netw = square_network()
    dec = decompose_paths(netw.network, square_optimal_flow(netw))
    assert not dec.cycles
    got = sorted((tuple(n[1] for n in p.nodes), round(p.volume, 12)) for p in dec.paths)
    want = sorted([
        (("E", "2", "N"), round(1 / 5, 12)),
        (("E", "2", "1", "W"), round(2 / 15, 12)),
        (("E", "3", "4", "W"), round(1 / 15, 12)),
        (("S", "4", "W"), round(3 / 5, 12)),
    ])
    assert got == want


def test_decompose_trivial_cases():
    net = FlowNetwork(("a", "b", "c"), (("a", "b"), ("b", "c"), ("c", "a")), {})
    assert decompose_paths(net, np.zeros(3)).terms == []
    dec = decompose_paths(net, np.array([0.5, 0.5, 0.5]))
    assert len(dec.cycles) == 1 and dec.cycles[0].volume == 0.5 and not dec.paths


def test_decompose_rejects_inadmissible():
    net = FlowNetwork(("a", "b"), (("a", "b"),), {"a": 1.0, "b": -1.0})
    with pytest.raises(FlowError):
        decompose_paths(net, [0.5])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_decomposition_reproduces_flow(seed):
    rng = np.random.default_rng(seed)
    net, w = random_network(rng, int(rng.integers(2, 9)), int(rng.integers(2, 20)))
    f = min_cost_flow_linear(net, w).flow
    # add a circulation so cycles appear too
    n = net.num_nodes
    ring = [k for k, (u, v) in enumerate(net.edges) if v == (u + 1) % n][:n]
    if len(ring) == n and n > 1:
        f = f.copy()
        f[ring] += 0.25
    dec = decompose_paths(net, f)
    assert np.allclose(dec.arc_flow(net.num_edges), f, atol=1e-9)
    for p in dec.paths:
        assert net.b[net.index[p.nodes[0]]] > 0 and net.b[net.index[p.nodes[-1]]] < 0


@pytest.mark.parametrize("seed", range(10))
def test_min_cost_flow_paths_run_supply_to_demand(seed):
    rng = np.random.default_rng(seed)
    net, w = random_network(rng, 8, 20)
    w = w + 0.1  # positive weights
    dec = decompose_paths(net, min_cost_flow_linear(net, w).flow)
    assert not dec.cycles
    for p in dec.paths:
        assert net.b[net.index[p.nodes[0]]] > 0 and net.b[net.index[p.nodes[-1]]] < 0


# -------------------------------------------------------- convex solver


def test_convex_on_square_network():
    netw = square_network()
    sol = min_cost_flow_convex(netw.network, netw.costs, tol=1e-7)
    assert sol.converged and sol.gap <= 1e-7
    assert sol.cost == pytest.approx(SQUARE_W, abs=1e-7)


@pytest.mark.parametrize("seed", range(15))
def test_convex_with_linear_costs_matches_linear(seed):
    rng = np.random.default_rng(seed)
    net, w = random_network(rng, 7, 16)
    sol = min_cost_flow_convex(net, [LinearCost(x) for x in w], tol=1e-9)
    assert sol.converged
    assert sol.cost == pytest.approx(min_cost_flow_linear(net, w).cost, abs=1e-9)


def test_convex_symmetric_split():
    # demand roads on both sides of a uniform supply road: the supply must
    # split evenly between its two endpoints
    rm = validate_roadmap(
        ["a", "u", "v", "b"],
        [("D1", "a", "u", 1.0), ("S", "u", "v", 1.0), ("D2", "v", "b", 1.0)],
    )
    src = Measure({"S": Dens.uniform(1.0, 1.0)})
    dst = Measure({"D1": Dens.uniform(1.0, 0.5), "D2": Dens.uniform(1.0, 0.5)})
    res = emd_exact(rm, src, dst, tol=1e-10)
    netw = res.network
    x_tail = res.flow[netw.tconn["S"]]

    phi = src["S"]
    chi = M.reverse(phi)

    def scalar(x):
        # mass x leaves via u, the rest via v; any mismatch crosses S
        return M.qcost(phi, x) + M.qcost(chi, 1 - x) + abs(x - 0.5) * 1.0

    best = minimize_scalar(scalar, bracket=(0.0, 0.3, 1.0), method="golden", tol=1e-10)
    assert best.x == pytest.approx(0.5, abs=1e-6)
    assert x_tail == pytest.approx(best.x, abs=1e-6)
    assert res.flow[netw.hconn["S"]] == pytest.approx(0.5, abs=1e-6)


def test_convex_zero_supply():
    net = FlowNetwork(("a", "b"), (("a", "b"), ("b", "a")), {})
    sol = min_cost_flow_convex(net, [1.0, 1.0])
    assert sol.cost == 0 and sol.converged


def test_convex_gap_certifies_optimality_against_bisection():
    # two parallel convex edges: optimum where the derivatives agree
    d1, d2 = Dens.uniform(1.0, 1.0), Dens((0, 1), (0.5,))
    net = FlowNetwork(("s", "t"), (("s", "t"), ("s", "t")), {"s": 0.5, "t": -0.5})

    def cc(d):
        return ConvexCost(lambda x: M.qcost(d, x), lambda x: M.inverse_cdf(d, x) if x > 0 else 0.0,
                          d.total, d.mass_breakpoints)

    sol = min_cost_flow_convex(net, [cc(d1), cc(d2)], tol=1e-12)
    # q1' = x, q2' = 2x: x1 = 2 x2, x1 + x2 = 1/2
    assert sol.flow[0] == pytest.approx(1 / 3, abs=1e-9)
    assert sol.cost == pytest.approx((1 / 3) ** 2 / 2 + (1 / 6) ** 2, abs=1e-12)


def test_convex_without_breakpoints_uses_bisection():
    net = FlowNetwork(("s", "t"), (("s", "t"), ("s", "t")), {"s": 1.0, "t": -1.0})
    costs = [
        ConvexCost(lambda x: x ** 4, lambda x: 4 * x ** 3, 1.0),
        ConvexCost(lambda x: 2 * x * x, lambda x: 4 * x, 1.0),
    ]
    sol = min_cost_flow_convex(net, costs, tol=1e-9)
    assert sol.converged
    x = sol.flow[0]
    # stationarity: 4 x^3 = 4 (1 - x)
    assert x ** 3 == pytest.approx(1 - x, abs=1e-3)
    grid = np.linspace(0, 1, 100001)
    assert sol.cost <= np.min(grid ** 4 + 2 * (1 - grid) ** 2) + 1e-9
