"""Tight mean exponential error: a loss that is minimal slightly inside the
satisfaction region and grows exponentially on the violation side."""
from __future__ import annotations

import numpy as np


def _sigmoid2(r):
    # σ(2r) written through tanh to stay finite for large |r|.
    return 0.5 * (1.0 + np.tanh(r))


def tmee(r):
    """Per-sample loss e^{-r} + r - σ(2r)."""
    r = np.asarray(r, dtype=float)
    out = np.exp(-r) + r - _sigmoid2(r)
    return float(out) if out.ndim == 0 else out


def tmee_grad(r):
    """Derivative -e^{-r} + 1 - 2σ(2r)(1 - σ(2r))."""
    r = np.asarray(r, dtype=float)
    s = _sigmoid2(r)
    out = -np.exp(-r) + 1.0 - 2.0 * s * (1.0 - s)
    return float(out) if out.ndim == 0 else out


def tmee_minimizer(tol: float = 1e-14) -> float:
    """Root of the gradient by bisection on [0, 1] (the gradient is increasing)."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if tmee_grad(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


R_STAR = tmee_minimizer()

