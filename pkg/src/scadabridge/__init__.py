"""Correlate SCADA command-pattern violations with physics-informed process anomalies."""

from ._kernels import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
