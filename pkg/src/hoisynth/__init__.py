"""Full-body manipulation motion from object motion with two conditional diffusion stages."""

__version__ = "0.1.0"
