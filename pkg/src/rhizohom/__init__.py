"""Multiscale soil/root water transport: resolved ε-periodic and homogenised models."""

__version__ = "0.1.0"
