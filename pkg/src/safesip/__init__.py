"""Feasibility-guaranteed trajectory optimization for articulated robots."""

try:
    from safesip.__version__ import __version__
except ImportError:  # no cov
    __version__ = "unknown"
