"""Parity measurement with parametrically driven Kerr resonators: trajectories, analytics and tools."""

__version__ = "0.1.0"
