"""Backend selection for the hot loops.

The compiled extension is preferred; the pure-Python module is used when the
extension is missing or when ``FRACFEM_BACKEND=python`` is set.
"""
import os
from types import ModuleType

from . import _pykernels

STATUS_NAMES = {
    _pykernels.OK: "ok",
    _pykernels.NOT_INSIDE: "point not inside start simplex",
    _pykernels.STALL: "traversal stall",
    _pykernels.CYCLE: "traversal cycle",
    _pykernels.PATTERN_MISS: "scatter target outside sparsity pattern",
}
OK = _pykernels.OK
NOT_INSIDE = _pykernels.NOT_INSIDE
STALL = _pykernels.STALL
CYCLE = _pykernels.CYCLE
PATTERN_MISS = _pykernels.PATTERN_MISS

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None) -> ModuleType:
    """Return the kernel module ``name`` (default: the active one)."""
    if name is None:
        return backend
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; "
                         f"available: {available_backends()}") from None


_requested = os.environ.get("FRACFEM_BACKEND", "").strip().lower()
if _requested:
    backend = get_backend(_requested)
    BACKEND = _requested
elif _ckernels is not None:
    backend, BACKEND = _ckernels, "compiled"
else:
    backend, BACKEND = _pykernels, "python"
