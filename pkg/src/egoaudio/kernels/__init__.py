"""Hot convolution/pooling kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``EGOAUDIO_BACKEND=python``
to force the fallback. :func:`use_backend` switches at runtime.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from egoaudio.kernels import _pykernels

try:
    from egoaudio.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _default() -> str:
    requested = os.environ.get("EGOAUDIO_BACKEND", "auto").lower()
    if requested == "auto":
        return "cython" if "cython" in _BACKENDS else "python"
    if requested not in _BACKENDS:
        raise ImportError(f"EGOAUDIO_BACKEND={requested!r} is not available; have {available_backends()}")
    return requested


_active = _default()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def conv3x3_forward(x, w, b):
    return _BACKENDS[_active].conv3x3_forward(_c(x), _c(w), _c(b))


def conv3x3_backward(x, w, gy):
    return _BACKENDS[_active].conv3x3_backward(_c(x), _c(w), _c(gy))


def maxpool2x2_forward(x):
    return _BACKENDS[_active].maxpool2x2_forward(_c(x))


def maxpool2x2_backward(gy, idx, h, w):
    return _BACKENDS[_active].maxpool2x2_backward(_c(gy), _c(idx), h, w)
