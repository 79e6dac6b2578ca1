"""Kernel backend selection.

``CURE_BACKEND=numba`` (default) uses the JIT-compiled kernels,
``CURE_BACKEND=numpy`` forces the pure-numpy fallback. The choice is made
once at import time; set the variable before importing the package.
"""

import os
import warnings

from . import kernels_numpy
from .errors import ConfigError

try:
    from . import kernels_numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but degrade gracefully
    kernels_numba = None
    HAS_NUMBA = False

_ENV_VAR = "CURE_BACKEND"
_CHOICES = ("numba", "numpy")


def select_kernels(name=None):
    """Resolve a kernel module by name, or from the environment if None."""
    if name is None:
        name = os.environ.get(_ENV_VAR, "numba").strip().lower()
    if name not in _CHOICES:
        raise ConfigError(f"{_ENV_VAR} must be one of {_CHOICES}, got {name!r}")
    if name == "numba":
        if HAS_NUMBA:
            return kernels_numba
        warnings.warn("numba unavailable, falling back to numpy kernels")
        return kernels_numpy
    return kernels_numpy


kernels = select_kernels()


def active_backend():
    """Name of the kernel backend the package is running on."""
    return kernels.NAME
