"""Feeder-wide optimal tap control for on-load tap changers.

Typical use::

    from tapopt import parse_feeder, FeederSolver, nominal_injections
    model = parse_feeder("feeder.txt")
    sol = FeederSolver(model).solve(model.zero_taps(), nominal_injections(model))
"""
from .controllers import AtcState, VlcState, atc_step, reference_to_tap, tap_to_reference, vlc_step
from .feeder import (
    FeederError, FeederModel, FeederParseError, FeederValidationError, OltcDevice, TapRangeError,
    build_admittance, format_feeder, parse_feeder, parse_feeder_text, scale_pv_penetration, tap_to_ratio,
)
from .otc import HorizonData, MilpInstance, TapSchedule, build_milp, plan_step, select_candidate_nodes, solve_milp
from .powerflow import FeederSolver, InjectionSet, PowerFlowError, VoltageSolution, nominal_injections, solve_power_flow
from .sensitivity import ErrorStats, SensitivityModel, build_sensitivity, delta_z, sensitivity_vector, validate_linearization

__version__ = "0.1.0"

__all__ = [
    "AtcState", "VlcState", "atc_step", "vlc_step", "reference_to_tap", "tap_to_reference",
    "FeederError", "FeederModel", "FeederParseError", "FeederValidationError", "OltcDevice", "TapRangeError",
    "build_admittance", "format_feeder", "parse_feeder", "parse_feeder_text", "scale_pv_penetration",
    "tap_to_ratio", "HorizonData", "MilpInstance", "TapSchedule", "build_milp", "plan_step",
    "select_candidate_nodes", "solve_milp", "FeederSolver", "InjectionSet", "PowerFlowError",
    "VoltageSolution", "nominal_injections", "solve_power_flow", "ErrorStats", "SensitivityModel",
    "build_sensitivity", "delta_z", "sensitivity_vector", "validate_linearization",
]
