"""Joint placement, power and user association for multi-UAV RSMA downlinks in cities."""

from .config import SolverConfig
from .harness import compare_baselines, run_experiment
from .scenario import GenSpec, Scenario, generate_scenario, load_default_scenario, load_scenario, save_scenario
from .solver import SCHEMES, run_bcd

__version__ = "0.1.0"

__all__ = [
    "GenSpec",
    "SCHEMES",
    "Scenario",
    "SolverConfig",
    "compare_baselines",
    "generate_scenario",
    "load_default_scenario",
    "load_scenario",
    "run_bcd",
    "run_experiment",
    "save_scenario",
]
