"""Multi-energy dispatch with carbon capture: simulation, learning agents and baselines."""

__version__ = "0.1.0"
