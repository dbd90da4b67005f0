"""Kernel backend selection.

The compiled module is used when importable; setting the environment
variable ``BCGPEAKS_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("BCGPEAKS_PURE_PYTHON", "") not in ("", "0"):
    impl = _kernels_py
else:
    try:
        from ._ext import _kernels as impl
    except ImportError:
        impl = _kernels_py

BACKEND = impl.BACKEND
lap_solve = impl.lap_solve
lex_assign = impl.lex_assign
cluster_starts = impl.cluster_starts
layer_norm_fwd = impl.layer_norm_fwd
layer_norm_bwd = impl.layer_norm_bwd
softmax_rows = impl.softmax_rows
softmax_rows_bwd = impl.softmax_rows_bwd
