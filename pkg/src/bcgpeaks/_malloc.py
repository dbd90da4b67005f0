"""Keep freed heap memory in the process during training.

Training frees and reallocates the same multi-megabyte activation buffers
every step. With glibc's defaults those buffers are mmap'd and returned to
the kernel, so every step pays for fresh zeroed pages (about 15 % of wall
time on a desk CPU). Raising the mmap and trim thresholds keeps them on the
heap. No-op on other C libraries.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD = -1, -3
_done = False


def retain_freed_memory() -> bool:
    """Return True when the allocator was reconfigured (idempotent)."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, ctypes.c_int(1 << 30)) == 1
    ok = mallopt(_M_TRIM_THRESHOLD, ctypes.c_int(2**31 - 1)) == 1 and ok
    _done = ok
    return ok
