"""Box-constrained limited-memory BFGS.

Search directions come from the two-loop recursion restricted to the free
variables; bounds are handled by gradient projection and a projected
backtracking line search. When a full step stays inside the box, a secant
step on the directional derivative is tried first, which makes the search
exact on quadratics.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ARMIJO_C1 = 1e-4
WOLFE_C2 = 0.9
ROUNDOFF = 4 * np.finfo(float).eps
CURVATURE_EPS = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    m: int = 10
    gtol: float = 1e-8
    max_iter: int = 500
    max_backtracks: int = 60

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("history size m must be >= 1")
        if not self.gtol > 0:
            raise ValueError("gtol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    pg_norm: float
    iterations: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["iteration,objective,pg_norm"]
        lines += [f"{k},{f!r},{g!r}" for k, f, g in self.history]
        return "\n".join(lines) + "\n"


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, best: OptimizeResult):
        super().__init__(message)
        self.best = best


def _bounds_arrays(bounds, n: int) -> tuple[np.ndarray, np.ndarray]:
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
    if lo.size != n:
        raise ValueError(f"{lo.size} bounds for {n} variables")
    if np.any(lo > hi):
        raise ValueError("lower bound above upper bound")
    return lo, hi


def projected_gradient(x: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.clip(x - g, lo, hi) - x


def two_loop(g: np.ndarray, pairs: Sequence[tuple[np.ndarray, np.ndarray, float]], gamma: float) -> np.ndarray:
    """Apply the L-BFGS inverse-Hessian approximation to ``g``."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return r


def minimize(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0,
    bounds: Sequence[tuple[float | None, float | None]] | None = None,
    config: OptimizerConfig = OptimizerConfig(),
) -> OptimizeResult:
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    lo, hi = _bounds_arrays(bounds, x.size)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("x0 must lie inside the bounds")
    f = float(fun(x))
    g = np.asarray(grad(x), dtype=float)
    pairs: deque = deque(maxlen=config.m)
    history = []
    best = OptimizeResult(x.copy(), f, math.inf, 0, history)

    for it in range(config.max_iter + 1):
        pg = projected_gradient(x, g, lo, hi)
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        history.append((it, f, pg_norm))
        if f <= best.fun:
            best = OptimizeResult(x.copy(), f, pg_norm, it, history)
        if pg_norm <= config.gtol:
            return OptimizeResult(x, f, pg_norm, it, history)
        if it == config.max_iter:
            break

        at_lo = (x <= lo) & (g > 0)
        at_hi = (x >= hi) & (g < 0)
        free = ~(at_lo | at_hi)
        gf = np.where(free, g, 0.0)
        if pairs:
            s_last, y_last, _ = pairs[-1]
            gamma = (s_last @ y_last) / (y_last @ y_last)
        else:
            gamma = 1.0 / max(1.0, float(np.linalg.norm(gf)))
        d = -two_loop(gf, list(pairs), gamma)
        d[~free] = 0.0
        if not (d @ g < 0):
            d = -gf
            pairs.clear()

        x_new, f_new = _line_search(fun, grad, x, f, g, d, lo, hi, config)
        if x_new is None:
            # Quasi-Newton direction failed; retry along the projected steepest descent.
            pairs.clear()
            x_new, f_new = _line_search(fun, grad, x, f, g, -gf, lo, hi, config)
            if x_new is None:
                break
        g_new = np.asarray(grad(x_new), dtype=float)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new

    raise NonConvergenceError(
        f"no convergence after {len(history) - 1} iterations (projected gradient {best.pg_norm:.3g})", best
    )


def _sufficient(f_new: float, f: float, g: np.ndarray, step: np.ndarray) -> bool:
    # Armijo with slack for round-off in f, so near-optimal steps are not rejected.
    return f_new <= f + ARMIJO_C1 * float(g @ step) + ROUNDOFF * abs(f)


def _line_search(fun, grad, x, f, g, d, lo, hi, config):
    """Projected backtracking with sufficient decrease; returns (x, f) or (None, None)."""
    if not np.any(d):
        return None, None
    # Largest step before leaving the box along d.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        to_bound = np.where(d > 0, (hi - x) / d, np.where(d < 0, (lo - x) / d, np.inf))
    max_free = float(np.min(to_bound))

    alpha = 1.0
    x_trial = np.clip(x + d, lo, hi)
    f_trial = float(fun(x_trial))
    if max_free >= 1.0:
        # Secant refinement on the directional derivative; exact for quadratics.
        gd0 = float(g @ d)
        gd1 = float(np.asarray(grad(x_trial), dtype=float) @ d)
        curv = gd1 - gd0
        if curv > 0:
            a = -gd0 / curv
            if 0 < a <= max_free and a != 1.0:
                x_sec = x + a * d
                f_sec = float(fun(x_sec))
                if _sufficient(f_sec, f, g, x_sec - x) and f_sec <= f_trial:
                    return x_sec, f_sec
        a = _wolfe(fun, grad, x, f, g, d, max_free, config.max_backtracks)
        if a is not None:
            x_w = x + a * d
            return x_w, float(fun(x_w))
    for _ in range(config.max_backtracks):
        if np.any(x_trial != x) and _sufficient(f_trial, f, g, x_trial - x):
            return x_trial, f_trial
        alpha *= 0.5
        x_trial = np.clip(x + alpha * d, lo, hi)
        f_trial = float(fun(x_trial))
    return None, None


def _wolfe(fun, grad, x, f, g, d, a_max, max_evals, c2=WOLFE_C2):
    """Step length meeting the strong Wolfe conditions inside the box, or None.

    Brackets by doubling from a unit step, then zooms with safeguarded
    quadratic interpolation.
    """
    dphi0 = float(g @ d)

    def phi(a):
        xa = x + a * d
        fa = float(fun(xa))
        return (fa if math.isfinite(fa) else math.inf), float(np.asarray(grad(xa), dtype=float) @ d)

    def armijo(a, fa):
        return fa <= f + ARMIJO_C1 * a * dphi0 + ROUNDOFF * abs(f)

    def zoom(lo, f_lo, dphi_lo, hi, f_hi):
        for _ in range(max_evals):
            width = hi - lo
            denom = 2.0 * (f_hi - f_lo - dphi_lo * width)
            a = lo - dphi_lo * width * width / denom if 0 < denom < math.inf else lo + 0.5 * width
            a = min(max(a, lo + 0.1 * width), hi - 0.1 * width) if width > 0 else max(a, hi - 0.1 * width)
            fa, dphi = phi(a)
            if not armijo(a, fa) or fa >= f_lo:
                hi, f_hi = a, fa
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return a
                if dphi * (hi - lo) >= 0:
                    hi, f_hi = lo, f_lo
                lo, f_lo, dphi_lo = a, fa, dphi
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return lo if lo > 0 else None

    a_prev, f_prev, dphi_prev = 0.0, f, dphi0
    a = min(1.0, a_max)
    for i in range(max_evals):
        fa, dphi = phi(a)
        if not armijo(a, fa) or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, dphi_prev, a, fa)
        if abs(dphi) <= -c2 * dphi0:
            return a
        if dphi >= 0:
            return zoom(a, fa, dphi, a_prev, f_prev)
        if a >= a_max:
            return a
        a_prev, f_prev, dphi_prev = a, fa, dphi
        a = min(2.0 * a, a_max)
    return a_prev if a_prev > 0 else None
