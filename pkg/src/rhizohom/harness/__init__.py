"""Configuration, orchestration and command-line interface."""

from .compare import ConvergenceReport, compare, field_norms
from .config import RunConfig, emit_config, load_config, parse_config

__all__ = [
    "ConvergenceReport",
    "RunConfig",
    "compare",
    "emit_config",
    "field_norms",
    "load_config",
    "parse_config",
]
