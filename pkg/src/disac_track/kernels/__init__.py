"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``DISAC_TRACK_BACKEND``
(``numba`` by default, ``numpy`` to force the fallback). If numba cannot be
imported the numpy path is used silently. Both modules are importable
directly for side-by-side testing and benchmarking.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _numpy

log = logging.getLogger(__name__)

ENV_VAR = "DISAC_TRACK_BACKEND"


def _load_numba() -> ModuleType | None:
    try:
        from . import _numba
    except ImportError as exc:  # pragma: no cover - depends on environment
        log.info("numba unavailable (%s); using numpy kernels", exc)
        return None
    return _numba


def _select() -> tuple[str, ModuleType]:
    wanted = os.environ.get(ENV_VAR, "numba").strip().lower()
    if wanted not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numba":
        mod = _load_numba()
        if mod is not None:
            return "numba", mod
    return "numpy", _numpy


BACKEND, _impl = _select()

gm_update = _impl.gm_update
merge_pass = _impl.merge_pass
greedy_partition = _impl.greedy_partition
psd_factor = _impl.psd_factor
cubature_points = _impl.cubature_points


def backends() -> dict[str, ModuleType]:
    """All importable kernel implementations keyed by name."""
    out = {"numpy": _numpy}
    mod = _load_numba()
    if mod is not None:
        out["numba"] = mod
    return out


__all__ = [
    "BACKEND",
    "ENV_VAR",
    "backends",
    "cubature_points",
    "gm_update",
    "greedy_partition",
    "merge_pass",
    "psd_factor",
]
