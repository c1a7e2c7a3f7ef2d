"""moistdg: matrix-free DG solver for moist compressible flow with rain."""

__version__ = "0.1.0"
