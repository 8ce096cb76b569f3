"""Earth Mover's distance between measures on road networks.

Quick start::

    from roademd import instance, emd_exact
    inst = instance.load(instance.fixture_path("square.json"))
    emd_exact(inst.roadmap, *inst.measures()).value   # 31/30
"""

__version__ = "0.1.0"

from .dpdp import (
    DemandPmf,
    Scenario,
    SimResult,
    critical_rate,
    expected_pd_distance,
    marginals,
    predicted_service_time,
    simulate,
)
from .emd_approx import emd_bounds, emd_path
from .emd_exact import emd_exact, interpret_flow
from .measures import Measure, PiecewiseConstantDensity
from .roadmap import Address, Road, RoadMap, point_distance, validate_roadmap, vertex_distances

__all__ = [
    "Address",
    "DemandPmf",
    "Measure",
    "PiecewiseConstantDensity",
    "Road",
    "RoadMap",
    "Scenario",
    "SimResult",
    "critical_rate",
    "emd_bounds",
    "emd_exact",
    "emd_path",
    "expected_pd_distance",
    "interpret_flow",
    "marginals",
    "point_distance",
    "predicted_service_time",
    "simulate",
    "validate_roadmap",
    "vertex_distances",
]
