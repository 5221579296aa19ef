"""Agent-based simulator of contract currencies, public service invoices and fiat credit."""
from .dynamics import World, build_world, run_scenario, step
from .scenario import ScenarioConfig, load_scenario, parse_scenario

__all__ = ["ScenarioConfig", "World", "build_world", "load_scenario", "parse_scenario", "run_scenario", "step"]
__version__ = "0.1.0"
