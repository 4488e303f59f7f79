"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
fallback. ``use_backend`` switches explicitly (tests and benchmarks).
"""

from contextlib import contextmanager

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = "cython" if _ckernels is not None else "python"


def available():
    return sorted(_BACKENDS)


def name():
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(backend):
    global _active
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} unavailable; have {available()}")
    _active = backend


@contextmanager
def use_backend(backend):
    previous = _active
    set_backend(backend)
    try:
        yield
    finally:
        set_backend(previous)
