"""Box-supervised instance-mask mining on point clouds."""

__version__ = "0.1.0"
