"""Trajectory-video control signals and mask-matching evaluation for robot world models."""

__version__ = "0.1.0"
