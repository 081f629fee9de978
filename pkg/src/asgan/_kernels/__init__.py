"""Hot loops of the keypoint metric, compiled when possible.

The Cython extension ``_core`` is used if it was built; otherwise (or when
``ASGAN_PURE_PYTHON=1``) the NumPy twins in ``_fallback`` are used.
"""
from __future__ import annotations

import os

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"python": _fallback}
if _core is not None:
    _BACKENDS["cython"] = _core

if os.environ.get("ASGAN_PURE_PYTHON", "") not in ("", "0") or _core is None:
    backend = _fallback
    BACKEND = "python"
else:
    backend = _core
    BACKEND = "cython"


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str | None = None):
    """The active backend module, or the one called ``name``."""
    if name is None:
        return backend
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}") from None


def use(name: str) -> None:
    """Switch the process-wide backend."""
    global backend, BACKEND
    backend = get(name)
    BACKEND = name
