"""Cooperative bird's-eye-view object detection with shared, aligned feature maps."""

__version__ = "0.1.0"
