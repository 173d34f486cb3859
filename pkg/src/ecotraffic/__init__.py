"""Microscopic two-lane traffic simulation of an eco-driving automated
vehicle interacting with human cut-in drivers between two signalized
intersections, plus the calibration pipeline for the driver model."""

__version__ = "0.1.0"
