"""Simulation-based identifiability testing for causal estimands."""

from .designs import get_design, list_catalog
from .sbi import SbiConfig, default_config, run

__all__ = ["SbiConfig", "default_config", "get_design", "list_catalog", "run"]
__version__ = "0.1.0"
