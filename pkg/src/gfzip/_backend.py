"""Kernel backend selection: compiled Cython if importable, numpy otherwise.

Set ``GFZIP_PURE_PYTHON=1`` to force the numpy path.
"""
from __future__ import annotations

import contextlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _kernels as _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

if os.environ.get("GFZIP_PURE_PYTHON", "").strip() not in ("", "0") or _ckernels is None:
    _active = "python"
else:
    _active = "cython"


def available() -> list[str]:
    return sorted(_BACKENDS)


def name() -> str:
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(backend: str) -> None:
    global _active
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} not available (have {available()})")
    _active = backend


@contextlib.contextmanager
def use_backend(backend: str):
    prev = _active
    set_backend(backend)
    try:
        yield
    finally:
        set_backend(prev)
