"""Time-series simulation, scenarios, fixtures and parameter studies."""
from .fixtures import bundled_feeder_path, generate_feeder, load_bundled
from .profiles import MissingProfileError, ProfileError, TimeSeriesProfile, read_profile_csv, write_profile_csv
from .qsts import SimulationResult, prepare, run_qsts, write_outputs
from .scenario import ConfigError, Scenario, load_scenario

__all__ = [
    "Scenario", "load_scenario", "ConfigError", "TimeSeriesProfile", "read_profile_csv", "write_profile_csv",
    "ProfileError", "MissingProfileError", "run_qsts", "prepare", "write_outputs", "SimulationResult",
    "bundled_feeder_path", "load_bundled", "generate_feeder",
]
