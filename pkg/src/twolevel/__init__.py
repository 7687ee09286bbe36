"""Two-level coarsening framework for large two-stage MILPs."""

__version__ = "0.1.0"
