"""Spiking reservoir construction, Lyapunov analysis and task-agnostic pruning."""

__version__ = "0.1.0"
