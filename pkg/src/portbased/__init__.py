"""Port-based teleportation: dense simulation, closed-form bounds and their cross-checks."""

__version__ = "0.1.0"
