"""JSON instance files: a road map plus optional measures and demand pmf.

Numbers may be JSON numbers or ``"p/q"`` rational strings.  Unknown fields
are rejected so typos do not pass silently.  See the README for the field
table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

from .dpdp import DemandPmf, ScenarioError
from .measures import Measure, MeasureError, PiecewiseConstantDensity, check_measure
from .roadmap import RoadMap, RoadmapError, validate_roadmap

TOP_FIELDS = {"description", "roadmap", "measures", "pmf"}
ROADMAP_FIELDS = {"vertices", "roads"}
ROAD_FIELDS = {"id", "tail", "head", "length"}
MEASURE_NAMES = {"src", "dst"}
DENSITY_FIELDS = {"breakpoints", "values"}


class InstanceError(ValueError):
    """Parse or validation failure; ``where`` names the offending field."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class Instance:
    roadmap: RoadMap
    src: Measure | None = None
    dst: Measure | None = None
    pmf: DemandPmf | None = None
    description: str = ""

    def measures(self) -> tuple[Measure, Measure]:
        if self.src is None or self.dst is None:
            raise InstanceError("instance needs both 'src' and 'dst' measures", "measures")
        return self.src, self.dst


def parse_number(value: Any, where: str) -> float:
    if isinstance(value, bool):
        raise InstanceError("expected a number, got a boolean", where)
    if isinstance(value, (int, float)):
        x = float(value)
    elif isinstance(value, str):
        try:
            x = float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise InstanceError(f"cannot read {value!r} as a number or p/q rational", where) from None
    else:
        raise InstanceError(f"expected a number, got {type(value).__name__}", where)
    if not math.isfinite(x):
        raise InstanceError("number must be finite", where)
    return x


def _expect(obj: Any, kind: type, where: str):
    if not isinstance(obj, kind):
        raise InstanceError(f"expected {kind.__name__}, got {type(obj).__name__}", where)
    return obj


def _check_fields(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise InstanceError(f"unknown field(s) {', '.join(map(repr, extra))}", where)
    missing = sorted(required - set(obj))
    if missing:
        raise InstanceError(f"missing field(s) {', '.join(map(repr, missing))}", where)


def _parse_roadmap(obj: Any) -> RoadMap:
    where = "roadmap"
    _expect(obj, dict, where)
    _check_fields(obj, ROADMAP_FIELDS, ROADMAP_FIELDS, where)
    verts = _expect(obj["vertices"], list, "roadmap.vertices")
    roads = []
    for i, r in enumerate(_expect(obj["roads"], list, "roadmap.roads")):
        w = f"roadmap.roads[{i}]"
        _expect(r, dict, w)
        _check_fields(r, ROAD_FIELDS, ROAD_FIELDS, w)
        roads.append((str(r["id"]), str(r["tail"]), str(r["head"]), parse_number(r["length"], w + ".length")))
    try:
        return validate_roadmap([str(v) for v in verts], roads)
    except RoadmapError as e:
        raise InstanceError(str(e), where) from None


def _parse_measure(obj: Any, rmap: RoadMap, where: str) -> Measure:
    _expect(obj, dict, where)
    out = {}
    for road, dens in obj.items():
        w = f"{where}.{road}"
        _expect(dens, dict, w)
        _check_fields(dens, DENSITY_FIELDS, DENSITY_FIELDS, w)
        bps = [parse_number(x, f"{w}.breakpoints[{k}]") for k, x in enumerate(_expect(dens["breakpoints"], list, w))]
        vals = [parse_number(x, f"{w}.values[{k}]") for k, x in enumerate(_expect(dens["values"], list, w))]
        try:
            out[str(road)] = PiecewiseConstantDensity(tuple(bps), tuple(vals))
        except MeasureError as e:
            raise InstanceError(str(e), w) from None
    m = Measure(out)
    try:
        check_measure(m, {r.id: r.length for r in rmap.roads})
    except MeasureError as e:
        raise InstanceError(str(e), where) from None
    return m


def _parse_pmf(obj: Any, rmap: RoadMap) -> DemandPmf:
    entries = []
    for i, t in enumerate(_expect(obj, list, "pmf")):
        w = f"pmf[{i}]"
        if not isinstance(t, list) or len(t) != 3:
            raise InstanceError("expected a [pickup road, delivery road, probability] triple", w)
        entries.append((str(t[0]), str(t[1]), parse_number(t[2], w + "[2]")))
    try:
        pmf = DemandPmf(tuple(entries))
        pmf.check(rmap)
    except ScenarioError as e:
        raise InstanceError(str(e), "pmf") from None
    return pmf


def instance_from_dict(obj: Any) -> Instance:
    _expect(obj, dict, "<root>")
    _check_fields(obj, TOP_FIELDS, {"roadmap"}, "<root>")
    rmap = _parse_roadmap(obj["roadmap"])
    src = dst = None
    if "measures" in obj:
        ms = _expect(obj["measures"], dict, "measures")
        _check_fields(ms, MEASURE_NAMES, set(), "measures")
        if "src" in ms:
            src = _parse_measure(ms["src"], rmap, "measures.src")
        if "dst" in ms:
            dst = _parse_measure(ms["dst"], rmap, "measures.dst")
    pmf = _parse_pmf(obj["pmf"], rmap) if "pmf" in obj else None
    desc = obj.get("description", "")
    return Instance(rmap, src, dst, pmf, str(desc))


def loads(text: str) -> Instance:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceError(f"invalid JSON: {e.msg}", f"line {e.lineno} column {e.colno}") from None
    return instance_from_dict(obj)


def load(path: str | Path) -> Instance:
    return loads(Path(path).read_text())


def _measure_dict(m: Measure) -> dict:
    return {r: {"breakpoints": list(d.breakpoints), "values": list(d.values)} for r, d in m.items()}


def instance_to_dict(inst: Instance) -> dict:
    out: dict[str, Any] = {}
    if inst.description:
        out["description"] = inst.description
    out["roadmap"] = {
        "vertices": list(inst.roadmap.vertices),
        "roads": [{"id": r.id, "tail": r.tail, "head": r.head, "length": r.length} for r in inst.roadmap.roads],
    }
    ms = {}
    if inst.src is not None:
        ms["src"] = _measure_dict(inst.src)
    if inst.dst is not None:
        ms["dst"] = _measure_dict(inst.dst)
    if ms:
        out["measures"] = ms
    if inst.pmf is not None:
        out["pmf"] = [[p, q, w] for p, q, w in inst.pmf.entries]
    return out


def dumps(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=2)


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture such as ``"square.json"``."""
    return Path(__file__).with_name("data") / name
