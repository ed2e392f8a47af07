"""Two-stream visuotactile fusion for surface roughness classification."""

__version__ = "0.1.0"
