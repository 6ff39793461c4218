"""Lyapunov certificates, rough-path tools and pullback attractor numerics for RDEs."""

__version__ = "0.1.0"
