import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from roademd import measures as M
from roademd.measures import Measure, MeasureError, PiecewiseConstantDensity as Dens

from helpers import random_density, square


@st.composite
def densities(draw, max_pieces=5):
    k = draw(st.integers(1, max_pieces))
    widths = draw(st.lists(st.floats(0.05, 2.0), min_size=k, max_size=k))
    vals = draw(st.lists(st.one_of(st.just(0.0), st.floats(0.01, 5.0)), min_size=k, max_size=k))
    assume(any(v > 0 for v in vals))
    bps = [0.0]
    for w in widths:
        bps.append(bps[-1] + w)
    return Dens(tuple(bps), tuple(vals))


def quad_pieces(fn, d: Dens, a: float, b: float) -> float:
    """Adaptive quadrature split at the density breakpoints."""
    pts = [a] + [y for y in d.breakpoints if a < y < b] + [b]
    return math.fsum(quad(fn, p, q, epsabs=1e-13, epsrel=1e-13)[0] for p, q in zip(pts, pts[1:]))


# ------------------------------------------------------------- construction


def test_density_validation():
    with pytest.raises(MeasureError):
        Dens((0.0, 1.0), (-1.0,))
    with pytest.raises(MeasureError):
        Dens((0.0, 1.0, 1.0), (1.0, 1.0))
    with pytest.raises(MeasureError):
        Dens((0.5, 1.0), (1.0,))
    with pytest.raises(MeasureError):
        Dens((0.0, 1.0), (1.0, 2.0))


# --------------------------------------------------------------------- cdf


def test_cdf_examples():
    assert M.cdf(Dens.uniform(1.0, 0.4), 0.5) == pytest.approx(0.2, abs=1e-15)
    assert M.cdf(Dens((0, 1, 2), (1, 3)), 0.0) == 0.0
    assert M.cdf(Dens((0, 1, 2), (1, 3)), 1.5) == 2.5


def test_cdf_rejects_out_of_range():
    with pytest.raises(MeasureError):
        M.cdf(Dens.uniform(1.0, 1.0), 1.5)


def test_inverse_cdf_examples():
    assert M.inverse_cdf(Dens.uniform(1.0, 0.4), 0.2) == pytest.approx(0.5, abs=1e-15)
    d = Dens((0, 0.5, 1), (2, 0))
    assert M.inverse_cdf(d, d.total) == 0.5  # end of support, not road end
    gap = Dens((0, 1, 2, 3), (1, 0, 1))
    assert M.inverse_cdf(gap, 1.0) == 1.0  # infimum, before the gap
    assert M.inverse_cdf(gap, 0.0) == 0.0
    with pytest.raises(MeasureError):
        M.inverse_cdf(gap, 2.5)
    with pytest.raises(MeasureError):
        M.inverse_cdf(gap, -0.1)


def test_qcost_examples():
    assert M.qcost(Dens.uniform(1.0, 0.4), 1 / 3) == pytest.approx(5 / 36, abs=1e-15)
    assert M.qcost(Dens.uniform(1.0, 0.8), 2 / 3) == pytest.approx(5 / 18, abs=1e-15)
    assert M.qcost(Dens((0, 1, 2), (1, 3)), 0.0) == 0.0


def test_reverse_examples():
    u = Dens.uniform(2.0, 1.0)
    assert M.reverse(u) == u
    assert M.reverse(Dens((0, 1, 2), (1, 3))) == Dens((0, 1, 2), (3, 1))


@pytest.mark.parametrize("seed", range(20))
def test_reverse_preserves_mass_and_involution(seed):
    d = random_density(np.random.default_rng(seed), 1.7)
    r = M.reverse(d)
    assert M.cdf(r, r.length) == pytest.approx(M.cdf(d, d.length), abs=1e-12)
    rr = M.reverse(r)
    assert np.allclose(rr.breakpoints, d.breakpoints, atol=1e-15) and rr.values == d.values


def test_min_and_subtract_examples():
    a = Measure({"r": Dens.uniform(1.0, 0.5)})
    mn = M.pointwise_min(a, a)
    assert mn == a
    assert M.total(M.subtract(a, mn).pruned()) == 0
    b = Measure({"s": Dens.uniform(1.0, 0.5)})
    assert M.total(M.pointwise_min(a, b)) == 0
    x = Measure({"r": Dens((0, 1, 2), (2, 2))})
    y = Measure({"r": Dens((0, 1, 2), (1, 3))})
    assert M.pointwise_min(x, y)["r"] == Dens((0, 1, 2), (1, 2))


def test_subtract_rejects_larger_subtrahend():
    x = Measure({"r": Dens((0, 1, 2), (2, 2))})
    y = Measure({"r": Dens((0, 1, 2), (1, 3))})
    with pytest.raises(MeasureError):
        M.subtract(x, y)


@pytest.mark.parametrize("seed", range(20))
def test_min_subtraction_gives_disjoint_supports(seed):
    rng = np.random.default_rng(seed)
    a = Measure({"r": random_density(rng, 2.0), "s": random_density(rng, 1.0)})
    b = Measure({"r": random_density(rng, 2.0)})
    mn = M.pointwise_min(a, b)
    da, db = M.subtract(a, mn), M.subtract(b, mn)
    for r in ("r", "s"):
        pa, pb = da.density(r, a[r].length), db.density(r, a[r].length)
        for y in np.linspace(0, a[r].length, 301)[:-1] + 1e-4:
            assert min(pa.value_at(y), pb.value_at(y)) <= 1e-12
    assert M.total(M.add(mn, da)) == pytest.approx(M.total(a), abs=1e-12)


def test_totals():
    _, src, dst = square()
    assert M.total(src) == pytest.approx(1.0, abs=1e-15)
    assert M.total(Measure()) == 0
    assert M.road_mass(src, "N") == 0
    assert M.road_mass(src, "E") == pytest.approx(0.4)


def test_check_measure():
    with pytest.raises(MeasureError, match="unknown road"):
        M.check_measure(Measure({"zz": Dens.uniform(1, 1)}), {"r": 1.0})
    with pytest.raises(MeasureError, match="length"):
        M.check_measure(Measure({"r": Dens.uniform(2, 1)}), {"r": 1.0})


# ------------------------------------------------------ property suites


@settings(max_examples=150, deadline=None)
@given(d=densities(), u=st.floats(0, 1))
def test_cdf_of_inverse_is_identity(d, u):
    x = u * d.total
    assert M.cdf(d, M.inverse_cdf(d, x)) == pytest.approx(x, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(d=densities(), u=st.floats(0, 1), v=st.floats(0, 1))
def test_q_convex(d, u, v):
    x1, x2 = u * d.total, v * d.total
    mid = M.qcost(d, 0.5 * (x1 + x2))
    assert mid <= 0.5 * (M.qcost(d, x1) + M.qcost(d, x2)) + 1e-12


@settings(max_examples=150, deadline=None)
@given(d=densities(), u=st.floats(0, 1), v=st.floats(0, 1))
def test_q_lipschitz(d, u, v):
    x1, x2 = u * d.total, v * d.total
    assert abs(M.qcost(d, x1) - M.qcost(d, x2)) <= d.length * abs(x1 - x2) + 1e-12


@settings(max_examples=150, deadline=None)
@given(d=densities(), u=st.floats(0, 1), v=st.floats(0, 1))
def test_q_tangent(d, u, v):
    x, x0 = u * d.total, v * d.total
    lin = M.qcost(d, x0) + M.inverse_cdf(d, x0) * (x - x0)
    assert M.qcost(d, x) >= lin - 1e-12


@settings(max_examples=60, deadline=None)
@given(d=densities())
def test_q_total_is_first_moment(d):
    ref = quad_pieces(lambda y: d.value_at(y) * y, d, 0.0, d.length)
    assert M.qcost(d, d.total) == pytest.approx(ref, abs=1e-9)
    assert d.first_moment == pytest.approx(ref, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(d=densities(), u=st.floats(0, 1))
def test_q_matches_quadrature(d, u):
    x = u * d.total
    y = M.inverse_cdf(d, x)
    ref = quad_pieces(lambda t: d.value_at(t) * t, d, 0.0, y) if y > 0 else 0.0
    assert M.qcost(d, x) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(d=densities(), u=st.floats(0, 1))
def test_cdf_matches_quadrature(d, u):
    y = u * d.length
    ref = quad_pieces(d.value_at, d, 0.0, y) if y > 0 else 0.0
    assert M.cdf(d, y) == pytest.approx(ref, abs=1e-10)
