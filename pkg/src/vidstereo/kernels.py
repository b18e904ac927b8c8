"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions.
``VIDSTEREO_KERNELS=python`` forces the fallback, ``=c`` makes a missing
extension an error.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import kernels_py

log = logging.getLogger(__name__)


def _load_compiled() -> ModuleType | None:
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


def _select() -> tuple[str, ModuleType]:
    choice = os.environ.get("VIDSTEREO_KERNELS", "auto").lower()
    if choice not in ("auto", "c", "python"):
        raise ValueError(f"VIDSTEREO_KERNELS must be auto, c or python, not {choice!r}")
    if choice == "python":
        return "python", kernels_py
    compiled = _load_compiled()
    if compiled is None:
        if choice == "c":
            raise ImportError("VIDSTEREO_KERNELS=c but vidstereo._ckernels is not built")
        log.info("compiled kernels unavailable, using numpy fallback")
        return "python", kernels_py
    return "c", compiled


BACKEND, _impl = _select()

corr_local_fwd = _impl.corr_local_fwd
corr_local_bwd = _impl.corr_local_bwd
corr_pairs_fwd = _impl.corr_pairs_fwd
corr_pairs_bwd = _impl.corr_pairs_bwd
warp_fwd = _impl.warp_fwd
warp_bwd = _impl.warp_bwd


def backend_module(name: str) -> ModuleType:
    """Return a specific backend ("c" or "python") regardless of the active one."""
    if name == "python":
        return kernels_py
    mod = _load_compiled()
    if mod is None:
        raise ImportError("compiled kernels are not built")
    return mod
