"""Hot inner loops.

The numba-compiled kernels are used by default.  Setting ``BOXMAP_NUMBA=0``
before import selects the pure numpy/python fallbacks, which produce identical
results (slower).  Both backends stay importable as ``_numba`` / ``_numpy`` for
cross-checking and benchmarking.
"""

from __future__ import annotations

import os

from . import _numpy

_flag = os.environ.get("BOXMAP_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from . import _numba as _impl
    except ImportError:  # numba missing: degrade silently to the fallback
        USE_NUMBA = False
        _impl = _numpy
else:
    _impl = _numpy

BACKEND = "numba" if USE_NUMBA else "numpy"

chamfer34 = _impl.chamfer34
raycast = _impl.raycast
bfs8 = _impl.bfs8
astar8 = _impl.astar8
held_karp = _impl.held_karp
box_field = _impl.box_field
box_field_backward = _impl.box_field_backward

__all__ = [
    "BACKEND",
    "USE_NUMBA",
    "chamfer34",
    "raycast",
    "bfs8",
    "astar8",
    "held_karp",
    "box_field",
    "box_field_backward",
]
