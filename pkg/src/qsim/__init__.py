"""Schrödinger and Pauli wave-function simulator with hydrodynamic diagnostics."""

from .em_fields import Constants, FieldConfig
from .grid import GridSpec, set_fft_workers

__all__ = ["Constants", "FieldConfig", "GridSpec", "set_fft_workers"]
__version__ = "0.1.0"
