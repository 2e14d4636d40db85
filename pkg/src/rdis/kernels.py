"""Backend selection for the GRU scan kernel.

The compiled ``rdis._scan`` extension is used when it imports; otherwise the
numpy implementation in ``rdis._scan_py``.  Set ``RDIS_KERNEL=python`` to force
the fallback (e.g. to benchmark or to debug the reference path).

Both kernels allocate a few MB of per-step caches on every call.  With
glibc's default policy those blocks are fresh ``mmap`` regions, so every call
pays a page fault per 4 KiB on first touch, which costs more than the
arithmetic at desk-scale sizes.  On glibc we raise the mmap and trim
thresholds once at import so freed blocks are recycled from the heap; set
``RDIS_NO_MALLOPT=1`` to leave the allocator alone.
"""

import ctypes
import ctypes.util
import os

from . import _scan_py

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def _tune_allocator(limit=1 << 28):
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    # the mmap threshold is capped by glibc at 32 MiB on 64-bit
    ok = mallopt(_M_MMAP_THRESHOLD, min(limit, 1 << 25))
    ok &= mallopt(_M_TRIM_THRESHOLD, limit)
    return bool(ok)


ALLOCATOR_TUNED = False
if not os.environ.get("RDIS_NO_MALLOPT"):
    ALLOCATOR_TUNED = _tune_allocator()

BACKEND = "python"
_impl = _scan_py

if os.environ.get("RDIS_KERNEL", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _scan as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"compiled"``, ``"python"`` or the default)."""
    if name is None:
        return _impl
    if name == "python":
        return _scan_py
    if name == "compiled":
        from . import _scan

        return _scan
    raise ValueError(f"unknown kernel backend {name!r}")


def scan_forward(x, m, W, U, b, Wo, bo, fill=True):
    return _impl.scan_forward(x, m, W, U, b, Wo, bo, fill)


def scan_backward(cache, d_hprev, d_yhat):
    return _impl.scan_backward(cache, d_hprev, d_yhat)
