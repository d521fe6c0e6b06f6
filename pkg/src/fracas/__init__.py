"""fracas: workspace-attention 3D fracture assembly."""

__version__ = "0.1.0"
