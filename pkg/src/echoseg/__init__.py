"""Lift 2D sounding-object masks into a Gaussian-splat scene and refine them with binaural cues."""

__version__ = "0.1.0"
