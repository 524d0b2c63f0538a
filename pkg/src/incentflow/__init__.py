"""incentflow: minimum-cost incentives for voltage-safe feeder operation.

Feedback optimizers (III, DAIO, FOIO, ZOIO) drive an incentive vector
against an unknown, possibly non-smooth end-user response until the
feeder's voltage band is restored at the smallest spend, with independent
LP/convex baselines for judging them.  Hot iteration loops run on a
compiled kernel when available and fall back to NumPy otherwise.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
