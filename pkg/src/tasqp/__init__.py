"""Whole-body task-space QP control for a simulated mobile humanoid."""

DT = 0.012  # control and device-loop period, seconds

__version__ = "0.1.0"
