"""Energy- and carbon-aware VM placement: ACO initial placement plus PSO migration."""

__version__ = "0.1.0"
