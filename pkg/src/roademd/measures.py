"""Piecewise-constant road densities and the per-road transport cost.

For a density ``phi`` on ``[0, L]``:

* ``cdf(phi, y)``          mass on ``[0, y]``
* ``inverse_cdf(phi, x)``  ``inf{y : cdf(y) >= x}``
* ``qcost(phi, x)``        cost of carrying the first ``x`` units of mass
  (counted from the tail) to the tail, i.e. the integral of ``phi(y) * y``
  up to ``inverse_cdf(phi, x)``.

``qcost`` is convex in ``x`` and ``inverse_cdf`` is a subgradient of it.
"""

from __future__ import annotations

import bisect
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

MASS_TOL = 1e-12
GRID_TOL = 1e-12


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        if len(vals) < 1 or len(bps) != len(vals) + 1:
            raise MeasureError("need len(breakpoints) == len(values) + 1 >= 2")
        if abs(bps[0]) > 0:
            raise MeasureError("first breakpoint must be 0")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise MeasureError("breakpoints must be strictly increasing")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise MeasureError("density values must be finite and nonnegative")

    @classmethod
    def uniform(cls, length: float, mass: float) -> "PiecewiseConstantDensity":
        return cls((0.0, length), (mass / length,))

    @classmethod
    def zero(cls, length: float) -> "PiecewiseConstantDensity":
        return cls((0.0, length), (0.0,))

    @property
    def length(self) -> float:
        return self.breakpoints[-1]

    @cached_property
    def _cum_mass(self) -> tuple[float, ...]:
        out = [0.0]
        for a, b, v in zip(self.breakpoints, self.breakpoints[1:], self.values):
            out.append(out[-1] + v * (b - a))
        return tuple(out)

    @cached_property
    def _cum_moment(self) -> tuple[float, ...]:
        out = [0.0]
        for a, b, v in zip(self.breakpoints, self.breakpoints[1:], self.values):
            out.append(out[-1] + 0.5 * v * (b * b - a * a))
        return tuple(out)

    @property
    def total(self) -> float:
        return self._cum_mass[-1]

    @property
    def first_moment(self) -> float:
        return self._cum_moment[-1]

    @property
    def mass_breakpoints(self) -> tuple[float, ...]:
        """Cumulative masses at the interior breakpoints."""
        return self._cum_mass[1:-1]

    @cached_property
    def support_start(self) -> float:
        """``inf{y : cdf(y) > 0}``, or the road length for the zero density."""
        for a, v in zip(self.breakpoints, self.values):
            if v > 0:
                return a
        return self.length

    def value_at(self, y: float) -> float:
        """Density value at ``y`` (right-continuous; last piece at ``L``)."""
        k = bisect.bisect_right(self.breakpoints, y) - 1
        return self.values[min(max(k, 0), len(self.values) - 1)]

    def is_zero(self, tol: float = MASS_TOL) -> bool:
        return all(v <= tol for v in self.values) or self.total <= tol


Density = PiecewiseConstantDensity


def _check_coord(d: Density, y: float) -> float:
    if y < -GRID_TOL or y > d.length + GRID_TOL:
        raise MeasureError(f"coordinate {y} outside [0, {d.length}]")
    return min(max(y, 0.0), d.length)


def _check_mass(d: Density, x: float) -> float:
    if x < -MASS_TOL or x > d.total + MASS_TOL:
        raise MeasureError(f"mass {x} outside [0, {d.total}]")
    return min(max(x, 0.0), d.total)


def _piece(d: Density, y: float) -> int:
    k = bisect.bisect_right(d.breakpoints, y) - 1
    return min(max(k, 0), len(d.values) - 1)


def cdf(d: Density, y: float) -> float:
    y = _check_coord(d, y)
    k = _piece(d, y)
    return d._cum_mass[k] + d.values[k] * (y - d.breakpoints[k])


def inverse_cdf(d: Density, x: float) -> float:
    x = _check_mass(d, x)
    if x <= 0.0:
        return 0.0
    cum = d._cum_mass
    # first piece whose right cumulative mass reaches x; it has positive mass
    k = bisect.bisect_left(cum, x, lo=1) - 1
    k = min(k, len(d.values) - 1)
    while d.values[k] <= 0 and k > 0:
        k -= 1
    v = d.values[k]
    if v <= 0:
        return 0.0
    return min(d.breakpoints[k] + (x - cum[k]) / v, d.breakpoints[k + 1])


def qcost(d: Density, x: float) -> float:
    x = _check_mass(d, x)
    if x <= 0.0:
        return 0.0
    y = inverse_cdf(d, x)
    k = _piece(d, y)
    if k > 0 and y <= d.breakpoints[k]:
        k -= 1
    a = d.breakpoints[k]
    return d._cum_moment[k] + 0.5 * d.values[k] * (y * y - a * a)


def reverse(d: Density) -> Density:
    L = d.length
    bps = tuple(L - b for b in reversed(d.breakpoints))
    return PiecewiseConstantDensity((0.0,) + bps[1:-1] + (L,), tuple(reversed(d.values)))


def restrict(d: Density, a: float, b: float) -> Density:
    """The density on ``[a, b]`` re-based to start at coordinate 0."""
    inner = [y for y in d.breakpoints if a + GRID_TOL < y < b - GRID_TOL]
    grid = [a, *inner, b]
    vals = [d.value_at(0.5 * (p + q)) for p, q in zip(grid, grid[1:])]
    return PiecewiseConstantDensity(tuple(y - a for y in grid), tuple(vals))


def merged_grid(*densities: Density) -> list[float]:
    """Sorted union of breakpoints, deduplicated within ``GRID_TOL``."""
    pts = sorted(y for d in densities for y in d.breakpoints)
    L = max(d.length for d in densities)
    if any(abs(d.length - L) > GRID_TOL for d in densities):
        raise MeasureError("densities live on roads of different lengths")
    out = [0.0]
    for y in pts:
        if y - out[-1] > GRID_TOL:
            out.append(y)
    out[-1] = L
    return out


def _combine(da: Density, db: Density, op) -> Density:
    grid = merged_grid(da, db)
    vals = []
    for a, b in zip(grid, grid[1:]):
        m = 0.5 * (a + b)
        vals.append(op(da.value_at(m), db.value_at(m)))
    # merge equal neighbours to keep the representation small
    bps, vs = [grid[0]], []
    for k, v in enumerate(vals):
        if vs and v == vs[-1]:
            bps[-1] = grid[k + 1]
        else:
            vs.append(v)
            bps.append(grid[k + 1])
    return PiecewiseConstantDensity(tuple(bps), tuple(vs))


class Measure(Mapping[str, Density]):
    """Road id -> density.  Roads not present carry no mass."""

    def __init__(self, densities: Mapping[str, Density] | None = None):
        self._d = dict(densities or {})

    def __getitem__(self, road: str) -> Density:
        return self._d[road]

    def __iter__(self) -> Iterator[str]:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __repr__(self) -> str:
        return f"Measure({self._d!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Measure) and self._d == other._d

    __hash__ = None  # type: ignore[assignment]

    def density(self, road: str, length: float) -> Density:
        d = self._d.get(road)
        return d if d is not None else PiecewiseConstantDensity.zero(length)

    def pruned(self) -> "Measure":
        """Drop roads whose density is identically zero."""
        return Measure({r: d for r, d in self._d.items() if any(v > 0 for v in d.values)})

    @classmethod
    def uniform(cls, masses: Mapping[str, float], lengths: Mapping[str, float]) -> "Measure":
        return cls({r: PiecewiseConstantDensity.uniform(lengths[r], m) for r, m in masses.items()})


def total(m: Measure) -> float:
    return math.fsum(d.total for d in m.values())


def road_mass(m: Measure, road: str) -> float:
    d = m.get(road)
    return 0.0 if d is None else d.total


def _binary(a: Measure, b: Measure, op, keep_missing: bool) -> Measure:
    out = {}
    for r in sorted(set(a) | set(b), key=lambda r: (r not in a, r)):
        da, db = a.get(r), b.get(r)
        if da is None or db is None:
            ref = da if da is not None else db
            da = da if da is not None else PiecewiseConstantDensity.zero(ref.length)
            db = db if db is not None else PiecewiseConstantDensity.zero(ref.length)
        out[r] = _combine(da, db, op)
    res = Measure(out)
    return res if keep_missing else res.pruned()


def pointwise_min(a: Measure, b: Measure) -> Measure:
    return _binary(a, b, min, keep_missing=False)


def add(a: Measure, b: Measure) -> Measure:
    return _binary(a, b, lambda x, y: x + y, keep_missing=True)


def subtract(a: Measure, b: Measure, tol: float = MASS_TOL) -> Measure:
    """Pointwise ``a - b``; requires ``b <= a`` up to ``tol``."""

    def diff(x: float, y: float) -> float:
        v = x - y
        if v < -tol:
            raise MeasureError(f"subtracting {y} from smaller density value {x}")
        return max(v, 0.0)

    return _binary(a, b, diff, keep_missing=True)


def scale(m: Measure, factor: float) -> Measure:
    return Measure(
        {r: PiecewiseConstantDensity(d.breakpoints, tuple(v * factor for v in d.values)) for r, d in m.items()}
    )


def check_measure(m: Measure, lengths: Mapping[str, float]) -> None:
    for r, d in m.items():
        if r not in lengths:
            raise MeasureError(f"measure references unknown road {r!r}")
        if abs(d.length - lengths[r]) > GRID_TOL:
            raise MeasureError(
                f"density on road {r!r} spans [0, {d.length}] but the road has length {lengths[r]}"
            )


def density_from_pieces(breakpoints: Sequence[float], values: Sequence[float]) -> Density:
    return PiecewiseConstantDensity(tuple(breakpoints), tuple(values))
