"""Iteration kernels with backend selection at import time.

The compiled Cython core is preferred when present; setting the
``INCENTFLOW_PURE`` environment variable forces the NumPy fallback.
``BACKEND`` records which one is active.
"""

import os

from . import _py
from .pack import EnvPack

if os.environ.get("INCENTFLOW_PURE"):
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _py
        BACKEND = "python"

TRIG_ON_VIOLATION = _py.TRIG_ON_VIOLATION
TRIG_BEFORE_FEASIBLE = _py.TRIG_BEFORE_FEASIBLE
TRIG_NONE = _py.TRIG_NONE
TRIG_RESETTING = _py.TRIG_RESETTING
MODE_PRACTICAL = _py.MODE_PRACTICAL
MODE_THEOREM2 = _py.MODE_THEOREM2
GRAD_EXACT = _py.GRAD_EXACT
GRAD_COARSE = _py.GRAD_COARSE
GRAD_LINAPPROX = _py.GRAD_LINAPPROX

run_iii = _impl.run_iii
run_daio = _impl.run_daio
run_foio = _impl.run_foio
run_zoio = _impl.run_zoio
kkt_residual = _py.kkt_residual
demand = _py.demand
grad_demand = _py.grad_demand
daio_primal = _py.daio_primal

__all__ = [
    "BACKEND",
    "EnvPack",
    "run_iii",
    "run_daio",
    "run_foio",
    "run_zoio",
    "kkt_residual",
    "demand",
    "grad_demand",
    "daio_primal",
]
