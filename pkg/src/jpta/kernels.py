"""Kernel backend selection.

The compiled ``_core`` extension is used when it was built; otherwise the
numpy implementations in ``_fallback`` are used. Setting the environment
variable ``JPTA_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("JPTA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

project_simplex_rows = _impl.project_simplex_rows
sca_ascent = _impl.sca_ascent
ttd_grid_argmax = _impl.ttd_grid_argmax
waterfill_level = _impl.waterfill_level
log_power_levels = _impl.log_power_levels

__all__ = [
    "BACKEND",
    "project_simplex_rows",
    "sca_ascent",
    "ttd_grid_argmax",
    "waterfill_level",
    "log_power_levels",
]
