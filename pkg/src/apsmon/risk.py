"""Blood-glucose risk index and hazard labeling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LBGI_THRESHOLD = 5.0
HBGI_THRESHOLD = 9.0
DEFAULT_WINDOW = 12

NONE, H1, H2 = "", "H1", "H2"


def symmetrized_bg(bg):
    """Inner transform; negative on the hypoglycemic side."""
    return 1.509 * (np.log(bg) ** 1.084 - 5.381)


def risk(bg: float) -> float:
    if not bg > 0:
        raise ValueError(f"BG must be > 0, got {bg}")
    return 10.0 * (1.509 * (math.log(bg) ** 1.084 - 5.381)) ** 2


def risk_side(bg: float) -> str:
    """'low', 'high' or 'zero' depending on the sign of the inner transform."""
    f = float(symmetrized_bg(bg))
    return "low" if f < 0 else "high" if f > 0 else "zero"


def zero_risk_bg() -> float:
    return math.exp(5.381 ** (1.0 / 1.084))


def one_sided_risk(bg: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    bg = np.asarray(bg, dtype=float)
    if np.any(bg <= 0):
        raise ValueError("BG must be > 0")
    f = symmetrized_bg(bg)
    r = 10.0 * f**2
    return np.where(f < 0, r, 0.0), np.where(f > 0, r, 0.0)


def lbgi_hbgi(bg_window: Sequence[float]) -> tuple[float, float]:
    low, high = one_sided_risk(bg_window)
    if low.size == 0:
        raise ValueError("empty window")
    return float(low.mean()), float(high.mean())


@dataclass(frozen=True)
class RiskSeries:
    risk: np.ndarray
    lbgi: np.ndarray
    hbgi: np.ndarray
    window: int

    @property
    def risk_index(self) -> np.ndarray:
        return self.lbgi + self.hbgi


def risk_series(bg: Sequence[float], window: int = DEFAULT_WINDOW) -> RiskSeries:
    """Trailing-window LBGI/HBGI; the first ``window - 1`` steps average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    low, high = one_sided_risk(bg)
    n = low.size
    counts = np.minimum(np.arange(1, n + 1), window)
    # Direct per-window sums: running-sum differences jitter by roundoff and
    # would make a flat index look like it is rising.
    pad = np.zeros(window - 1)
    lbgi = sliding_window_view(np.concatenate([pad, low]), window).sum(axis=1) / counts
    hbgi = sliding_window_view(np.concatenate([pad, high]), window).sum(axis=1) / counts
    return RiskSeries(risk=low + high, lbgi=lbgi, hbgi=hbgi, window=window)


@dataclass(frozen=True)
class HazardLabel:
    labels: tuple[str, ...]
    onset_index: int | None
    dt: float = 5.0

    @property
    def onset_time(self) -> float | None:
        return None if self.onset_index is None else self.onset_index * self.dt

    @property
    def hazard_type(self) -> str:
        return NONE if self.onset_index is None else self.labels[self.onset_index]

    @property
    def hazardous(self) -> bool:
        return self.onset_index is not None


def label(
    bg: Sequence[float],
    window: int = DEFAULT_WINDOW,
    thresholds: tuple[float, float] = (LBGI_THRESHOLD, HBGI_THRESHOLD),
    dt: float = 5.0,
) -> HazardLabel:
    """H1 where LBGI exceeds its threshold and rose since the previous step; H2 likewise for HBGI."""
    series = risk_series(bg, window)
    lo_thr, hi_thr = thresholds
    lbgi, hbgi = series.lbgi, series.hbgi
    rising_l = np.zeros_like(lbgi, dtype=bool)
    rising_h = np.zeros_like(hbgi, dtype=bool)
    rising_l[1:] = lbgi[1:] > lbgi[:-1]
    rising_h[1:] = hbgi[1:] > hbgi[:-1]
    h1 = (lbgi > lo_thr) & rising_l
    h2 = (hbgi > hi_thr) & rising_h
    labels = tuple(H1 if a else H2 if b else NONE for a, b in zip(h1, h2))
    onset = next((i for i, v in enumerate(labels) if v), None)
    return HazardLabel(labels=labels, onset_index=onset, dt=dt)


def mean_risk_index(bg: Sequence[float], window: int = DEFAULT_WINDOW) -> float:
    """Per-trace average of LBGI + HBGI over the whole horizon."""
    return float(risk_series(bg, window).risk_index.mean())
