"""Learning per-step PD gains alongside joint-position actions for planar in-hand manipulation."""

__version__ = "0.1.0"
