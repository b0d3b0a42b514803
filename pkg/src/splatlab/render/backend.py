"""Compositing kernel backend selection.

Two interchangeable implementations exist: numba-jitted scalar loops
(fast) and vectorized numpy (no compiler dependency). The environment
variable ``SPLATLAB_BACKEND`` pins one explicitly ("numba" or "numpy");
otherwise numba is used when importable and numpy is the fallback.
Both compute the same arithmetic per pixel in the same order.
"""

from __future__ import annotations

import importlib
import os

BACKENDS = ("numba", "numpy")
ENV_VAR = "SPLATLAB_BACKEND"

_active: str | None = None


def _default() -> str:
    env = os.environ.get(ENV_VAR, "").strip().lower()
    if env:
        if env not in BACKENDS:
            raise ValueError(f"{ENV_VAR}={env!r}: expected one of {BACKENDS}")
        return env
    try:
        importlib.import_module("numba")
        return "numba"
    except ImportError:
        return "numpy"


def current() -> str:
    global _active
    if _active is None:
        _active = _default()
    return _active


def select(name: str) -> str:
    """Switch backend programmatically; returns the previous selection."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}: expected one of {BACKENDS}")
    previous = current()
    _active = name
    return previous


def kernels():
    """Kernel module for the active backend."""
    return importlib.import_module(f"splatlab.render.kernels_{current()}")
