"""Allocator tuning for the training loop.

Training allocates and frees the same multi-megabyte temporaries every
iteration.  By default glibc serves those with fresh ``mmap`` pages, so every
op pays page faults.  Raising the mmap and trim thresholds keeps the memory in
the heap for reuse.  No-op off glibc.
"""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator() -> bool:
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1 and mallopt(_M_TRIM_THRESHOLD, 1 << 31) == 1
    _done = ok
    return ok
