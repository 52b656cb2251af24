"""Facade rectification, occlusion inpainting and city-block assembly from single photos."""

__version__ = "0.1.0"
