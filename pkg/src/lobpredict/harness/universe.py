"""Liquidity-score stock selection."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

CHARACTERISTICS = ("Updates", "Trades", "Price Changes", "Spread")


def _average_rank(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the mean of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_scores(values: Sequence[float]) -> np.ndarray:
    """Min-max scaled average ranks: largest value -> 1, smallest -> 0."""
    r = _average_rank(np.asarray(values, dtype=np.float64))
    span = r.max() - r.min()
    if span == 0:
        return np.full(len(r), 0.5)
    return (r - r.min()) / span


def liquidity_scores(table: Mapping[str, Mapping[str, float]],
                     columns: Sequence[str] = CHARACTERISTICS) -> dict[str, float]:
    tickers = list(table)
    missing = [c for c in columns if any(c not in table[t] for t in tickers)]
    if missing:
        raise ValueError(f"characteristics table lacks columns {missing}")
    subs = np.stack([rank_scores([table[t][c] for t in tickers]) for c in columns])
    return dict(zip(tickers, subs.mean(axis=0).tolist()))


def select_universe(table: Mapping[str, Mapping[str, float]], n: int,
                    columns: Sequence[str] = CHARACTERISTICS) -> list[str]:
    """Tickers at ``n`` evenly spaced quantiles of the liquidity score.

    The quantile targets are ``linspace(0, 1, n)`` over the sorted scores; each
    target picks the nearest not yet chosen ticker.  Result is ordered by score.
    """
    scores = liquidity_scores(table, columns)
    if not 1 <= n <= len(scores):
        raise ValueError(f"cannot pick {n} of {len(scores)} tickers")
    ranked = sorted(scores, key=lambda t: (scores[t], t))
    if n == 1:
        return [ranked[len(ranked) // 2]]
    positions = np.linspace(0, len(ranked) - 1, n)
    chosen: list[int] = []
    for pos in positions:
        cands = sorted(range(len(ranked)), key=lambda i: (abs(i - pos), i))
        chosen.append(next(i for i in cands if i not in chosen))
    return [ranked[i] for i in sorted(chosen)]
