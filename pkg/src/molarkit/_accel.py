"""
JIT switch for the numeric kernels.

Set ``MOLARKIT_DISABLE_JIT=1`` before import (or call :func:`set_backend`)
to run the pure-numpy fallbacks instead of the numba kernels. If numba
cannot be imported the numpy path is used unconditionally.
"""
import os
import warnings

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the pinned env
    HAVE_NUMBA = False

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


_BACKEND = "numpy" if (_env_flag("MOLARKIT_DISABLE_JIT") or not HAVE_NUMBA) else "numba"


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _BACKEND


def set_backend(name):
    """Switch kernel backend at runtime; returns the previous name."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        warnings.warn("numba is not installed; staying on the numpy backend")
        return _BACKEND
    previous, _BACKEND = _BACKEND, name
    return previous


def use_jit():
    return _BACKEND == "numba"


__all__ = ["njit", "HAVE_NUMBA", "backend", "set_backend", "use_jit"]
