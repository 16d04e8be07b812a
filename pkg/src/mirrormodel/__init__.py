"""Lorentz mirror model on Z^2 and odd cylinders: simulation, exact enumeration and checks."""
from .dynamics import Region, TraceOutcome, default_region, inverse_step, step, trace
from .environment import (
    Axis,
    Environment,
    EnvironmentSpec,
    MirrorState,
    ModelKind,
    RotatingOverlay,
    Topology,
    canonicalize,
    effective_mirror,
    mirror_at,
    record_flip,
    street_orientation,
)
from .estimate import (
    Estimate,
    ExactResult,
    ParityReport,
    check_bound,
    clopper_pearson,
    cylinder_parity_check,
    escape_probability,
    exact_escape_probability,
    sweep,
    theorem_bound,
)
from .models import Direction, RayState, initial_state, reflect, turn_rule, validate_model_topology
from .percolation import ClusterResult, confinement_check, vacant_star_cluster

__version__ = "0.1.0"
