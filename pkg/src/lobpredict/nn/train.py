"""Weighted cross-entropy, Adam, early-stopped training and checkpoints."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..store import CHECKPOINT_MAGIC, read_container, write_container
from . import tensor as tt
from .model import BENCHMARK, SEQ2SEQ, ModelSpec, ParamSet, forward_logp, init_params, predict_proba

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0
    batch_size: int = 256
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    n: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    flags: list[str] = field(default_factory=list)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "best"])
            w.writeheader()
            w.writerows(self.rows)


def class_weights(labels: np.ndarray) -> np.ndarray:
    """``w_c = N / #{y = c}`` per head; ``(3,)`` or ``(K, 3)``.  Absent classes get 0."""
    y = np.asarray(labels)
    single = y.ndim == 1
    y = y.reshape(len(y), -1)
    out = np.zeros((y.shape[1], 3))
    for k in range(y.shape[1]):
        counts = np.bincount(y[:, k], minlength=3).astype(np.float64)
        out[k] = np.where(counts > 0, len(y) / np.maximum(counts, 1), 0.0)
    return out[0] if single else out


def weighted_cce(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None,
                 floor: float = PROB_FLOOR) -> float:
    """``-(1/N) sum_i w_{y_i} log p_{y_i}``, averaged over heads for ``(N, K, 3)`` input.

    Probabilities are clamped at ``floor`` so a missing class cannot give an
    infinite loss.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim == 2:
        p, y = p[:, None], y.reshape(-1, 1)
    N, K, _ = p.shape
    w = np.ones((K, 3)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (K, 3))
    picked = np.take_along_axis(p, y[..., None], axis=2)[..., 0]
    if (picked < floor).any():
        logger.debug("probability clamp engaged on %d targets", int((picked < floor).sum()))
    nll = -np.log(np.maximum(picked, floor))
    per_head = (w[np.arange(K)[None, :], y] * nll).mean(axis=0)
    return float(per_head.mean())


def cce_loss_tensor(logp: tt.Tensor, labels: np.ndarray, weights: np.ndarray) -> tt.Tensor:
    """Differentiable weighted CCE on log-probabilities ``(N, 3)`` or ``(N, K, 3)``."""
    y = np.asarray(labels)
    if logp.ndim == 2:
        y = y.reshape(-1, 1)
        logp = tt.reshape(logp, (logp.shape[0], 1, 3))
    N, K, _ = logp.shape
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (K, 3))
    coef = np.zeros(logp.shape, dtype=logp.dtype)
    n_idx, k_idx = np.meshgrid(np.arange(N), np.arange(K), indexing="ij")
    coef[n_idx, k_idx, y] = -w[k_idx, y] / (N * K)
    return tt.sum_(tt.scale_by(logp, coef))


def loss_and_grads(spec: ModelSpec, params: ParamSet, x: np.ndarray, y: np.ndarray, weights: np.ndarray,
                   training: bool = True, rng: np.random.Generator | None = None):
    """Loss, gradient dict and batch-norm updates for one batch."""
    logp, ctx = forward_logp(spec, params, x, training=training, rng=rng, track=True)
    loss = cce_loss_tensor(logp, y, weights)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in ctx.t.items()}
    return float(loss.data), grads, ctx.bn_updates


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: OptimizerState,
              cfg: TrainConfig) -> None:
    """In-place Adam update with ``eps`` added to ``sqrt(v_hat)``."""
    opt.n += 1
    n = opt.n
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**n
    c2 = 1.0 - b2**n
    for k, p in params.items():
        g = grads[k]
        m = opt.m[k]
        v = opt.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype, copy=False)


def benchmark_predict(train_labels: np.ndarray) -> np.ndarray:
    """Empirical class frequencies, ``(3,)`` or ``(K, 3)``."""
    y = np.asarray(train_labels)
    if len(y) == 0:
        raise ValueError("no training labels")
    single = y.ndim == 1
    y = y.reshape(len(y), -1)
    freq = np.stack([np.bincount(y[:, k], minlength=3) / len(y) for k in range(y.shape[1])])
    if (freq == 0).any():
        logger.warning("benchmark frequencies contain an empty class")
    return freq[0] if single else freq


def train_model(spec: ModelSpec, train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
                cfg: TrainConfig = TrainConfig(), params: ParamSet | None = None) -> tuple[ParamSet, History]:
    """Minimise weighted CCE with Adam and validation early stopping.

    The best-validation parameters are restored.  Validation loss is the
    unweighted CCE.  The run is a deterministic function of ``cfg.seed``.
    """
    x_tr, y_tr = train
    x_va, y_va = val
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    history = History()
    if spec.family == BENCHMARK:
        freq = benchmark_predict(y_tr)
        ps = ParamSet({"freq": np.asarray(freq, dtype=cfg.dtype).reshape(spec.K, 3)})
        if (freq == 0).any():
            history.flags.append("degenerate-benchmark")
        train_loss = weighted_cce(predict_proba(spec, ps, np.zeros(len(y_tr))), y_tr)
        val_loss = weighted_cce(predict_proba(spec, ps, np.zeros(len(y_va))), y_va)
        history.rows.append({"epoch": 1, "train_loss": train_loss, "val_loss": val_loss, "best": 1})
        history.best_epoch = 1
        return ps, history
    if len(np.unique(y_tr)) < 2:
        raise ValueError("training labels span fewer than two classes")

    dtype = np.dtype(cfg.dtype)
    ps = init_params(spec, cfg.seed, dtype) if params is None else params.copy()
    weights = class_weights(y_tr)
    if spec.head == SEQ2SEQ and weights.ndim == 1:
        raise ValueError("seq2seq needs (N, K) labels")
    opt = OptimizerState.zeros_like(ps.params)
    rng = np.random.default_rng(cfg.seed)
    best = ps.copy()
    best_val = np.inf
    wait = 0
    x_tr = np.asarray(x_tr, dtype=dtype)
    n = len(y_tr)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads, bn = loss_and_grads(spec, ps, x_tr[idx], y_tr[idx], weights, True, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{spec.name}: loss {loss} at epoch {epoch}, batch starting {start}")
            adam_step(ps.params, grads, opt, cfg)
            ps.buffers.update(bn)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = weighted_cce(predict_proba(spec, ps, x_va), y_va)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"{spec.name}: validation loss {val_loss} at epoch {epoch}")
        improved = val_loss < best_val
        if improved:
            best_val = val_loss
            best = ps.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
        history.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "best": int(improved)})
        logger.debug("%s epoch %d train %.5f val %.5f", spec.name, epoch, train_loss, val_loss)
        if wait >= cfg.patience:
            history.stopped_early = True
            break
    return best, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | os.PathLike, spec: ModelSpec, params: ParamSet, seed: int = 0, epoch: int = 0,
                    extra: dict | None = None) -> Path:
    arrays = {f"param/{k}": v for k, v in params.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in params.buffers.items()})
    meta = {"spec": spec.to_dict(), "seed": seed, "epoch": epoch}
    if extra:
        meta["extra"] = extra
    return write_container(path, arrays, meta, CHECKPOINT_MAGIC)


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelSpec, ParamSet, dict]:
    arrays, meta = read_container(path, CHECKPOINT_MAGIC)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in arrays.items() if k.startswith("buffer/")}
    return ModelSpec(**meta["spec"]), ParamSet(params, buffers), meta


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
