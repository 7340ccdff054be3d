"""Inverse hand-shadow pose optimization with a differentiable capsule silhouette renderer."""

__version__ = "0.1.0"
