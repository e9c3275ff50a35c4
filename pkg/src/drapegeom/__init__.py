"""Triangle-mesh curvature, draping losses with analytic gradients, and refinement."""

__version__ = "0.1.0"
