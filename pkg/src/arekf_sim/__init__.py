"""Manipulator tracking with EKF / adaptive robust EKF state estimation."""

from .config import ScenarioConfig, parse_config, render_config
from .simulation import run_scenario

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "parse_config", "render_config", "run_scenario"]
