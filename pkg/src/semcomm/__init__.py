"""Multi-robot search-and-transport simulator with event-triggered semantic messaging."""

from .sim import RunMetrics, SimConfig, Simulation, compare_modes, run

__all__ = ["RunMetrics", "SimConfig", "Simulation", "compare_modes", "run"]
__version__ = "0.1.0"
