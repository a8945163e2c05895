"""Central finite-difference check of model gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SEQ2SEQ, ModelSpec, ParamSet, forward_logp, init_params
from .train import cce_loss_tensor, loss_and_grads

# every family/level at the tiny verification size
TINY_DIMS = dict(T=8, L=2, W=4, D=3, K=3, channels=2, hidden=4)
TINY_VARIANTS = (
    ("deepLOB", "L2"),
    ("deepLOB", "L1"),
    ("deepOF", "L2"),
    ("deepOF", "L1"),
    ("deepVOL", "L2"),
    ("deepVOL-L3", "L3"),
)


@dataclass
class GradCheck:
    spec: ModelSpec
    errors: dict[str, float]  # per-parameter relative error

    @property
    def worst(self) -> float:
        return max(self.errors.values())


def _loss(spec: ModelSpec, ps: ParamSet, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    logp, _ = forward_logp(spec, ps, x, training=True, track=False)
    return float(cce_loss_tensor(logp, y, w).data)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / (|a| + |n|)`` in the Euclidean norm over a parameter array."""
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(den, 1e-12))


def gradient_check(spec: ModelSpec, seed: int = 0, batch: int = 3, step: float = 1e-6) -> GradCheck:
    """Compare analytic gradients of weighted CCE with central differences at 64-bit.

    Biases and batch-norm offsets are perturbed away from zero first so that
    no gradient is trivially zero.  Training mode is used without dropout
    (no RNG), so the loss is a deterministic function of the parameters.
    """
    ps = init_params(spec, seed, np.float64)
    rng = np.random.default_rng(seed)
    for k, v in ps.params.items():
        if k.endswith(".b") or k.endswith(".beta"):
            v += rng.normal(0, 0.1, v.shape)
    x = rng.random((batch,) + spec.input_shape)
    y = rng.integers(0, 3, (batch, spec.K)) if spec.head == SEQ2SEQ else rng.integers(0, 3, batch)
    w = np.array([1.0, 2.0, 0.5])
    _, grads, _ = loss_and_grads(spec, ps, x, y, w, training=True)
    errors = {}
    for k, p in ps.params.items():
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + step
            up = _loss(spec, ps, x, y, w)
            p[i] = old - step
            down = _loss(spec, ps, x, y, w)
            p[i] = old
            num[i] = (up - down) / (2 * step)
        errors[k] = relative_error(grads[k], num)
    return GradCheck(spec, errors)


def tiny_specs() -> list[ModelSpec]:
    return [ModelSpec(f, lvl, head, **TINY_DIMS) for f, lvl in TINY_VARIANTS for head in ("single", "seq2seq")]
