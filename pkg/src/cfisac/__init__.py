"""Position error bounds and power allocation for cell-free OTFS sensing and communication."""

__version__ = "0.1.0"
