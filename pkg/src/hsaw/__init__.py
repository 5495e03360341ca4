"""Hierarchical cross-modal GAN anomaly detection on frame/optical-flow couples."""

__version__ = "0.1.0"
