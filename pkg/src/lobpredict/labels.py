"""Mid-price returns, the class threshold and three-class labels.

Classes are coded ``0 = down``, ``1 = flat``, ``2 = up``.  The flat class is
the closed interval ``[-alpha, alpha]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DOWN, FLAT, UP = 0, 1, 2
CLASS_NAMES = ("down", "flat", "up")

PAPER = "paper-smoothed"
FI2010 = "fi2010"
DEEPLOB = "deeplob"
VARIANTS = (PAPER, FI2010, DEEPLOB)

DEFAULT_HORIZONS = (10, 20, 30, 50, 100)


@dataclass(frozen=True)
class ReturnSpec:
    """Return definition: ``variant``, horizon ``h`` and smoothing ``k``."""

    variant: str = PAPER
    horizon: int = 10
    k: int = 5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown return variant {self.variant!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.k < 0:
            raise ValueError("smoothing window must be non-negative")

    def stencil(self) -> tuple[int, int]:
        """Offsets ``(back, ahead)`` of mid-prices the return at ``t`` reads."""
        h, k = self.horizon, self.k
        if self.variant == PAPER:
            return max(0, k - h), h + k
        if self.variant == FI2010:
            return 0, h
        return h - 1, h


@dataclass(frozen=True)
class ClassThreshold:
    alpha: float
    horizon: int | None = None
    window: int | None = None
    ticker: str | None = None
    fallback: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass
class LabelSet:
    """Labels at anchor events ``index`` for horizons ``horizons``.

    ``classes`` and ``returns`` have shape ``(n, K)``.
    """

    index: np.ndarray
    horizons: tuple[int, ...]
    classes: np.ndarray
    returns: np.ndarray
    alphas: tuple[float, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.index)

    def counts(self, k: int = 0) -> np.ndarray:
        return np.bincount(self.classes[:, k], minlength=3)


def compute_return(mid: Sequence[float], spec: ReturnSpec, t: int) -> float | None:
    """Return at anchor ``t``; ``None`` when the stencil leaves the series."""
    m = np.asarray(mid, dtype=np.float64)
    back, ahead = spec.stencil()
    if t - back < 0 or t + ahead >= len(m):
        return None
    h, k = spec.horizon, spec.k
    if spec.variant == PAPER:
        smooth = m[t + h - k : t + h + k + 1].mean()
        return float((smooth - m[t]) / m[t])
    ahead_mean = m[t + 1 : t + h + 1].mean()
    if spec.variant == FI2010:
        return float((ahead_mean - m[t]) / m[t])
    past = m[t - h + 1 : t + 1].mean()
    return float((ahead_mean - past) / past)


def _window_mean(m: np.ndarray, lo: np.ndarray, hi: np.ndarray, cs: np.ndarray) -> np.ndarray:
    # mean of m[lo:hi] via a prefix sum
    return (cs[hi] - cs[lo]) / (hi - lo)


def return_series(mid: Sequence[float], spec: ReturnSpec) -> np.ndarray:
    """Returns at every event; NaN where the stencil leaves the series."""
    m = np.asarray(mid, dtype=np.float64)
    n = len(m)
    out = np.full(n, np.nan)
    back, ahead = spec.stencil()
    t = np.arange(back, n - ahead)
    if len(t) == 0:
        return out
    cs = np.concatenate([[0.0], np.cumsum(m)])
    h, k = spec.horizon, spec.k
    if spec.variant == PAPER:
        if k == 0:
            out[t] = (m[t + h] - m[t]) / m[t]
        else:
            smooth = _window_mean(m, t + h - k, t + h + k + 1, cs)
            out[t] = (smooth - m[t]) / m[t]
        return out
    ahead_mean = _window_mean(m, t + 1, t + h + 1, cs)
    if spec.variant == FI2010:
        out[t] = (ahead_mean - m[t]) / m[t]
    else:
        past = _window_mean(m, t - h + 1, t + 1, cs)
        out[t] = (ahead_mean - past) / past
    return out


def alpha_hat(returns: Sequence[float], horizon: int | None = None, window: int | None = None,
              ticker: str | None = None, quantiles: tuple[float, float] = (0.33, 0.66)) -> ClassThreshold:
    """Threshold ``(|Q(0.33)| + Q(0.66)) / 2`` from training returns.

    Quantiles interpolate linearly between order statistics placed at
    probabilities ``(i - 1) / (n - 1)``.  A non-positive result falls back to
    half the smallest non-zero ``|r|`` and marks the threshold.
    """
    r = np.asarray(returns, dtype=np.float64)
    r = r[~np.isnan(r)]
    if r.size == 0:
        raise ValueError("no returns to fit a threshold on")
    lo, hi = np.quantile(r, quantiles, method="linear")
    alpha = (abs(lo) + hi) / 2
    if alpha > 0:
        return ClassThreshold(float(alpha), horizon, window, ticker)
    nz = np.abs(r[r != 0])
    alpha = nz.min() / 2 if nz.size else np.finfo(np.float64).eps
    logger.warning("alpha fit degenerate (%s, h=%s); falling back to %.3g", ticker, horizon, alpha)
    return ClassThreshold(float(alpha), horizon, window, ticker, fallback=True)


def classify(returns: np.ndarray | float, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    r = np.asarray(returns, dtype=np.float64)
    return np.where(r < -alpha, DOWN, np.where(r > alpha, UP, FLAT)).astype(np.int64)


def classify_returns(returns: np.ndarray, alpha: float | Sequence[float], index: np.ndarray | None = None,
                     horizons: Sequence[int] = (0,)) -> LabelSet:
    """Label returns of shape ``(n,)`` or ``(n, K)`` with one alpha per column."""
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim == 1:
        r = r[:, None]
    alphas = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (r.shape[1],))
    classes = np.stack([classify(r[:, j], a) for j, a in enumerate(alphas)], axis=1)
    idx = np.arange(len(r)) if index is None else np.asarray(index)
    return LabelSet(idx, tuple(horizons), classes, r, tuple(float(a) for a in alphas))


def multi_horizon_returns(mid: Sequence[float], horizons: Sequence[int] = DEFAULT_HORIZONS,
                          variant: str = PAPER, k: int = 5) -> np.ndarray:
    """``(n, K)`` returns from ``t`` to ``t + h_k`` for each horizon."""
    horizons = tuple(horizons)
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be strictly increasing")
    return np.stack([return_series(mid, ReturnSpec(variant, h, k)) for h in horizons], axis=1)
