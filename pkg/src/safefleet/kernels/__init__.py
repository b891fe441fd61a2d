"""Numeric kernel backend selection.

At import time the compiled extension (``safefleet.kernels._native``) is
preferred; the pure-Python module is the fallback. Setting the environment
variable ``SAFEFLEET_PURE=1`` forces the fallback. Callers should access the
kernels through this module (``kernels.best_route(...)``) so that
``use_backend`` can swap implementations, which the benchmark suite relies on.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType

from . import pure

MAX_ROUTE_STOPS = pure.MAX_ROUTE_STOPS

_ext: ModuleType | None = None
if os.environ.get("SAFEFLEET_PURE", "") not in ("1", "true", "yes"):
    try:
        _ext = importlib.import_module("safefleet.kernels._native")
    except ImportError:
        _ext = None

BACKEND = "native" if _ext is not None else "pure"

hover_terms = (_ext or pure).hover_terms
propulsion_terms = (_ext or pure).propulsion_terms
path_cost = (_ext or pure).path_cost
best_route = (_ext or pure).best_route


def available_backends() -> tuple[str, ...]:
    return ("pure", "native") if _ext is not None else ("pure",)


def use_backend(name: str) -> None:
    """Point the module-level kernel functions at the named backend."""
    global BACKEND, hover_terms, propulsion_terms, path_cost, best_route
    if name == "pure":
        mod: ModuleType = pure
    elif name == "native":
        if _ext is None:
            raise ValueError("native backend is not available (extension not built)")
        mod = _ext
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    hover_terms = mod.hover_terms
    propulsion_terms = mod.propulsion_terms
    path_cost = mod.path_cost
    best_route = mod.best_route
    BACKEND = name
