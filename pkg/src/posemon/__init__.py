"""Runtime monitors for 3D human pose estimates."""

__version__ = "0.1.0"
