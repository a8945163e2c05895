"""Model Confidence Set on per-window test losses (T_max statistic).

Given losses ``L[i, w]`` for models ``i`` and windows ``w``, the equivalence
test at each stage uses the deviations of every model's mean loss from the
average over the surviving set, studentised by block-bootstrap variances.
Models are eliminated worst first until the test no longer rejects; stage
p-values give MCS p-values through a running maximum.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .nn.train import PROB_FLOOR


class DegeneratePanel(ValueError):
    """Every loss difference has zero bootstrap variance."""


@dataclass
class LossPanel:
    models: list[str]
    losses: np.ndarray  # (n_models, n_windows)
    sizes: np.ndarray | None = None  # test-set size per window

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.losses.ndim != 2 or self.losses.shape[0] != len(self.models):
            raise ValueError("losses must be (n_models, n_windows)")
        if not np.isfinite(self.losses).all():
            raise ValueError("loss panel contains non-finite entries")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate model names")

    @property
    def n_windows(self) -> int:
        return self.losses.shape[1]

    def subset(self, models: Sequence[str]) -> "LossPanel":
        idx = [self.models.index(m) for m in models]
        return LossPanel(list(models), self.losses[idx], self.sizes)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "window", "loss", "n"])
            for i, m in enumerate(self.models):
                for j in range(self.n_windows):
                    n = "" if self.sizes is None else int(self.sizes[j])
                    w.writerow([m, j + 1, repr(float(self.losses[i, j])), n])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "LossPanel":
        rows: dict[str, dict[int, float]] = {}
        sizes: dict[int, int] = {}
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.setdefault(r["model"], {})[int(r["window"])] = float(r["loss"])
                if r.get("n"):
                    sizes[int(r["window"])] = int(r["n"])
        models = list(rows)
        windows = sorted(next(iter(rows.values())))
        losses = np.array([[rows[m][w] for w in windows] for m in models])
        sz = np.array([sizes[w] for w in windows]) if len(sizes) == len(windows) else None
        return cls(models, losses, sz)


@dataclass
class Stage:
    models: list[str]
    dbar: np.ndarray  # d_bar_{i.}
    t: np.ndarray
    tmax: float
    pvalue: float
    eliminated: str | None
    quantiles: dict[str, float] = field(default_factory=dict)


@dataclass
class MCSResult:
    models: list[str]
    pvalues: dict[str, float]
    order: list[str]  # elimination order, final survivor last
    stages: list[Stage]
    alphas: tuple[float, ...] = (0.05, 0.01)
    B: int = 0
    block: int = 0
    seed: int = 0

    def included(self, alpha: float) -> list[str]:
        """Models in the (1 - alpha) confidence set: ``p_MCS >= alpha``."""
        return [m for m in self.models if self.pvalues[m] >= alpha]

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "pvalues": self.pvalues,
            "order": self.order,
            "alphas": list(self.alphas),
            "sets": {str(a): self.included(a) for a in self.alphas},
            "B": self.B,
            "block": self.block,
            "seed": self.seed,
            "stages": [
                {
                    "models": s.models,
                    "dbar": s.dbar.tolist(),
                    "t": s.t.tolist(),
                    "tmax": s.tmax,
                    "pvalue": s.pvalue,
                    "eliminated": s.eliminated,
                    "quantiles": s.quantiles,
                }
                for s in self.stages
            ],
        }

    def to_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def window_loss(probs: np.ndarray, labels: np.ndarray, floor: float = PROB_FLOOR) -> float:
    """Mean unweighted cross-entropy of one window's test set."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty test window")
    picked = p[np.arange(len(y)), y]
    return float(-np.log(np.maximum(picked, floor)).mean())


def window_losses(outputs: Mapping[str, Sequence[np.ndarray]], labels: Sequence[np.ndarray]) -> LossPanel:
    """Panel from per-model lists of ``(N_w, 3)`` predictions and per-window labels."""
    models = list(outputs)
    for m in models:
        if len(outputs[m]) != len(labels):
            raise ValueError(f"model {m} has {len(outputs[m])} windows, labels have {len(labels)}")
    losses = np.array([[window_loss(p, y) for p, y in zip(outputs[m], labels)] for m in models])
    return LossPanel(models, losses, np.array([len(y) for y in labels]))


def block_length(n_windows: int) -> int:
    return max(1, math.ceil(n_windows ** (1 / 3) - 1e-12))


def block_indices(n_windows: int, B: int, block: int, seed: int) -> np.ndarray:
    """``(B, W)`` moving-block resamples of window indices."""
    if block < 1 or block > n_windows:
        raise ValueError("block length must lie in 1..W")
    rng = np.random.default_rng(seed)
    n_blocks = -(-n_windows // block)
    starts = rng.integers(0, n_windows - block + 1, size=(B, n_blocks))
    idx = (starts[:, :, None] + np.arange(block)[None, None, :]).reshape(B, -1)
    return idx[:, :n_windows]


def _stage_stats(means: np.ndarray, boot_means: np.ndarray):
    dbar = means - means.mean()
    dstar = boot_means - boot_means.mean(axis=1, keepdims=True)
    var = ((dstar - dbar) ** 2).mean(axis=0)
    if not (var > 0).any():
        raise DegeneratePanel("bootstrap variance is zero for every model")
    sd = np.sqrt(var)
    ok = var > 0
    t = np.zeros_like(dbar)
    t[ok] = dbar[ok] / sd[ok]
    centred = np.zeros_like(dstar)
    centred[:, ok] = (dstar[:, ok] - dbar[ok]) / sd[ok]
    return dbar, t, centred.max(axis=1)


def bootstrap_tmax(panel: LossPanel, B: int = 10_000, block: int | None = None, seed: int = 0,
                   indices: np.ndarray | None = None):
    """``(t, T_max, T*_max sample, p-value)`` for the models in ``panel``."""
    if len(panel.models) < 2:
        raise ValueError("the equivalence test needs at least two models")
    W = panel.n_windows
    if W < 2:
        raise ValueError("need at least two windows")
    if indices is None:
        indices = block_indices(W, B, block or block_length(W), seed)
    boot = panel.losses[:, indices].mean(axis=2).T  # (B, m)
    dbar, t, tstar = _stage_stats(panel.losses.mean(axis=1), boot)
    tmax = float(t.max())
    return t, tmax, tstar, float((tstar >= tmax).mean())


def mcs_run(panel: LossPanel, alphas: Sequence[float] = (0.05, 0.01), B: int = 10_000,
            block: int | None = None, seed: int = 0) -> MCSResult:
    """Sequential elimination over the full model set, recording MCS p-values.

    Elimination continues to a single survivor so every model gets a
    p-value; the confidence set at level ``alpha`` is ``{i : p_i >= alpha}``.
    """
    models = list(panel.models)
    W = panel.n_windows
    if len(models) == 1:
        return MCSResult(models, {models[0]: 1.0}, models, [], tuple(alphas), B, 0, seed)
    if W < 2:
        raise ValueError("need at least two windows")
    block = block or block_length(W)
    idx = block_indices(W, B, block, seed)
    means = panel.losses.mean(axis=1)
    boot = panel.losses[:, idx].mean(axis=2).T  # (B, m), shared by all stages
    alive = list(range(len(models)))
    stages: list[Stage] = []
    pvals: dict[str, float] = {}
    running = 0.0
    order = []
    while len(alive) > 1:
        dbar, t, tstar = _stage_stats(means[alive], boot[:, alive])
        tmax = float(t.max())
        p = float((tstar >= tmax).mean())
        worst = alive[int(np.argmax(t))]  # argmax returns the lowest index on ties
        running = max(running, p)
        pvals[models[worst]] = running
        order.append(models[worst])
        q = {str(a): float(np.quantile(tstar, 1 - a)) for a in alphas}
        stages.append(Stage([models[i] for i in alive], dbar, t, tmax, p, models[worst], q))
        alive.remove(worst)
    pvals[models[alive[0]]] = 1.0
    order.append(models[alive[0]])
    return MCSResult(models, {m: pvals[m] for m in models}, order, stages, tuple(alphas), B, block, seed)
