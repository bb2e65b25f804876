"""Kernel backend selection.

The numba path is the default; HAARGP_DISABLE_NUMBA=1 (or a failed numba
import) selects the pure-numpy fallback. Both backends consume identical
pre-drawn randomness, so seeded results agree across them.
"""

from . import _kernels_numpy
from .config import numba_disabled

_numba_import_error = None
if numba_disabled():
    _kernels_numba = None
else:
    try:
        from . import _kernels_numba
    except ImportError as exc:  # pragma: no cover - environment dependent
        _kernels_numba = None
        _numba_import_error = exc


def active_backend() -> str:
    return "numpy" if _kernels_numba is None else "numba"


def get_kernels(backend=None):
    """Kernel module for the requested backend (default: active one)."""
    if backend in (None, "auto"):
        return _kernels_numpy if _kernels_numba is None else _kernels_numba
    if backend == "numpy":
        return _kernels_numpy
    if backend == "numba":
        if _kernels_numba is None:
            raise RuntimeError(
                f"numba backend unavailable "
                f"(disabled={numba_disabled()}, import error={_numba_import_error})"
            )
        return _kernels_numba
    raise ValueError(f"unknown backend {backend!r}")
