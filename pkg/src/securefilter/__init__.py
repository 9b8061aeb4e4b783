"""Secure state reconstruction and CBF safety filtering under sensor spoofing.

A library and CLI simulating a sampled-data unicycle whose position sensors
can be rewired by an omniscient adversary. Sensor-subset observability maps
plus consistency checks rebuild the set of plausible states from a rolling
input-output window, and a zero-order control-barrier-function filter
minimally corrects the nominal input so the safety constraint holds for every
plausible state.
"""

from .dynamics import (
    Box,
    SamplingConfig,
    exact_flow,
    rk4_step,
    state_distance,
    vector_field,
    wrap_angle,
)
from .reconstruction import (
    IOWindow,
    PlausibleSet,
    ReconstructionError,
    SingularityFloors,
    SubsetEstimate,
    UnicycleSystem,
    check_2s_agreement,
    consistency_check,
    enumerate_subsets,
    estimate_signal_and_derivative,
    observability_map_unicycle,
    plausible_initial_set,
    propagate_plausible_set,
)
from .safety import CbfSpec, FilterResult, cbf_constraint, h_band, secure_filter
from .scenario import (
    Calibration,
    RunSummary,
    ScenarioSpec,
    StepRecord,
    nominal_controller,
    reference_path,
    run_closed_loop,
    summarize,
)
from .sensing import (
    AttackPlan,
    Attacker,
    SensorSubset,
    corrupt,
    measure,
    project,
)

__version__ = "0.1.0"
