"""Heatmap pooling network: feedback pooling of pose heatmaps, spatial/motion
co-learning on a skeleton graph, text refinement modulation and score fusion."""

__version__ = "0.1.0"
