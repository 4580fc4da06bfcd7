"""Decentralized GPR agents for AoI-aware power and RB allocation in V2V networks."""

from .config import ScenarioConfig, load_config
from .kernels import BACKEND
from .engine import run_simulation

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "load_config", "run_simulation", "BACKEND", "__version__"]
