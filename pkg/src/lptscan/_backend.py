"""Selects the kernel-sum implementation at import time.

The compiled core is preferred. Set ``LPTSCAN_BACKEND=python`` to force the
numpy fallback (the benchmark and the backend-agreement tests do this
through :func:`get_backend`).
"""
import os

from lptscan import _kdefallback

try:
    from lptscan import _kdecore
except ImportError:  # extension not built
    _kdecore = None

_BACKENDS = {"python": _kdefallback}
if _kdecore is not None:
    _BACKENDS["cython"] = _kdecore


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        name = BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"kernel backend {name!r} not available; have {available_backends()}"
        ) from None


_requested = os.environ.get("LPTSCAN_BACKEND", "").strip().lower()
if _requested:
    BACKEND = _requested
    get_backend(BACKEND)
else:
    BACKEND = "cython" if _kdecore is not None else "python"
