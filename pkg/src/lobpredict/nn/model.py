"""deepLOB, deepOF, deepVOL and deepVOL-L3 networks plus the benchmark.

Every network is a convolutional module followed by an inception module, a
64-unit LSTM and either a softmax readout (single horizon) or an LSTM
decoder over ``K`` horizons (seq2seq).  Each convolution is followed by a
leaky ReLU and batch normalisation, except the L3 queue convolution, which
stays linear so that an all-ones filter aggregates queues into tick volumes.

Inputs are batches ``(N, T, ...)``: ``(N, T, 4L)`` raw LOB, ``(N, T, 2L)``
order flow, ``(N, T, W, 2)`` volume, ``(N, T, W, 2, D)`` L3 volume.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..features import ORDER_FLOW, RAW_LOB, VOLUME, VOLUME_L3, FeatureWindow
from . import tensor as tt
from .tensor import Tensor

BENCHMARK = "benchmark"
DEEPLOB = "deepLOB"
DEEPOF = "deepOF"
DEEPVOL = "deepVOL"
DEEPVOL_L3 = "deepVOL-L3"
FAMILIES = (BENCHMARK, DEEPLOB, DEEPOF, DEEPVOL, DEEPVOL_L3)

SINGLE = "single"
SEQ2SEQ = "seq2seq"

ALLOWED_LEVELS = {
    BENCHMARK: (None,),
    DEEPLOB: ("L1", "L2"),
    DEEPOF: ("L1", "L2"),
    DEEPVOL: ("L2",),
    DEEPVOL_L3: ("L3",),
}

REPRESENTATION = {DEEPLOB: RAW_LOB, DEEPOF: ORDER_FLOW, DEEPVOL: VOLUME, DEEPVOL_L3: VOLUME_L3}

BN_MOMENTUM = 0.6
BN_EPS = 1e-3
LEAKY_SLOPE = 0.01
DROPOUT = 0.2


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    level: str | None = "L2"
    head: str = SINGLE
    T: int = 100
    L: int = 10
    W: int = 20
    D: int = 10
    K: int = 1
    channels: int = 32
    hidden: int = 64

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        level = None if self.family == BENCHMARK else self.level
        object.__setattr__(self, "level", level)
        if level not in ALLOWED_LEVELS[self.family]:
            raise ValueError(f"{self.family} is not defined for level {level}")
        if self.head not in (SINGLE, SEQ2SEQ):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == SINGLE and self.K != 1:
            object.__setattr__(self, "K", 1)
        if self.head == SEQ2SEQ and self.K < 1:
            raise ValueError("seq2seq needs K >= 1")

    @property
    def name(self) -> str:
        if self.family == DEEPVOL_L3:
            base = f"{DEEPVOL}(L3)"
        else:
            base = self.family if self.level is None else f"{self.family}({self.level})"
        return base + ("-seq2seq" if self.head == SEQ2SEQ else "")

    @property
    def representation(self) -> str | None:
        return REPRESENTATION.get(self.family)

    @property
    def levels_used(self) -> int:
        return 1 if self.level == "L1" else self.L

    @property
    def input_shape(self) -> tuple[int, ...]:
        rep = self.representation
        if rep == RAW_LOB:
            return (self.T, 4 * self.levels_used)
        if rep == ORDER_FLOW:
            return (self.T, 2 * self.levels_used)
        if rep == VOLUME:
            return (self.T, self.W, 2)
        if rep == VOLUME_L3:
            return (self.T, self.W, 2, self.D)
        return ()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConvLayer:
    name: str
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[tuple[int, int], ...]
    cin: int
    cout: int
    activate: bool = True


def _time_conv(name: str, c: int, k: int = 4) -> ConvLayer:
    return ConvLayer(name, (k, 1), (1, 1), (tt.same_padding(k), (0, 0)), c, c)


def conv_plan(spec: ModelSpec) -> tuple[list[ConvLayer], list[ConvLayer]]:
    """(entry layers, 2-d conv module) for the spec's family.

    Entry layers act on higher-rank inputs (deepVOL folds) before the
    remaining 2-d ``(T, width, C)`` module.
    """
    C, L = spec.channels, spec.levels_used
    entry: list[ConvLayer] = []
    body: list[ConvLayer] = []
    if spec.family == DEEPLOB:
        body += [ConvLayer("conv1", (1, 2), (1, 2), ((0, 0), (0, 0)), 1, C), _time_conv("conv1b", C), _time_conv("conv1c", C)]
    if spec.family in (DEEPLOB, DEEPOF):
        cin = C if spec.family == DEEPLOB else 1
        body += [ConvLayer("conv2", (1, 2), (1, 2), ((0, 0), (0, 0)), cin, C), _time_conv("conv2b", C), _time_conv("conv2c", C)]
        body += [ConvLayer("conv3", (1, L), (1, 1), ((0, 0), (0, 0)), C, C), _time_conv("conv3b", C), _time_conv("conv3c", C)]
        return entry, body
    W = spec.W
    if spec.family == DEEPVOL_L3:
        entry.append(ConvLayer("queue", (1, 1, 1, spec.D), (1, 1, 1, 1), ((0, 0),) * 4, 1, C, activate=False))
    cin = C if spec.family == DEEPVOL_L3 else 1
    entry.append(ConvLayer("fold", (1, 2, 2), (1, 1, 1), ((0, 0),) * 3, cin, C))
    body += [_time_conv("conv1b", C), _time_conv("conv1c", C)]
    body += [ConvLayer("conv2", (1, W - 1), (1, 1), ((0, 0), (0, 0)), C, C), _time_conv("conv2b", C), _time_conv("conv2c", C)]
    return entry, body


def inception_plan(C: int) -> list[ConvLayer]:
    B = 2 * C
    one = ((0, 0),)
    return [
        ConvLayer("inc1a", (1,), (1,), one, C, B),
        ConvLayer("inc1b", (3,), (1,), (tt.same_padding(3),), B, B),
        ConvLayer("inc2a", (1,), (1,), one, C, B),
        ConvLayer("inc2b", (5,), (1,), (tt.same_padding(5),), B, B),
        ConvLayer("inc3", (1,), (1,), one, C, B),
    ]


def check_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape (without batch) of every conv stage; raises naming the bad layer."""
    if spec.family == BENCHMARK:
        return []
    entry, body = conv_plan(spec)
    shape = spec.input_shape + (1,)
    trace = []
    for layer in entry + body:
        if layer is body[0] and entry:
            # fold output (T, W-1, 1, C) is squeezed to (T, W-1, C)
            shape = (shape[0], shape[1], shape[-1])
        sp = shape[:-1]
        if len(sp) != len(layer.kernel):
            raise ShapeError(f"layer {layer.name}: expects rank {len(layer.kernel)} spatial input, got {sp}")
        if shape[-1] != layer.cin:
            raise ShapeError(f"layer {layer.name}: expects {layer.cin} channels, got {shape[-1]}")
        try:
            sp = tuple(tt.conv_output_size(s, k, st, p) for s, k, st, p in zip(sp, layer.kernel, layer.stride, layer.padding))
        except ValueError as exc:
            raise ShapeError(f"layer {layer.name}: {exc}") from None
        shape = sp + (layer.cout,)
        if layer.name == "queue":
            shape = shape[:3] + (layer.cout,)
        trace.append((layer.name, shape))
    if shape[1:-1] != (1,):
        raise ShapeError(f"conv module ends in {shape}, expected (T, 1, C)")
    trace.append(("inception", (spec.T, 6 * spec.channels)))
    trace.append(("lstm", (spec.hidden,)))
    trace.append(("output", (spec.K, 3) if spec.head == SEQ2SEQ else (3,)))
    return trace


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class ParamSet:
    """Trainable arrays plus batch-norm moving statistics (``buffers``)."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.params.items()}, {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.params.items()}, {k: v.astype(dtype) for k, v in self.buffers.items()})

    def count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def equal(self, other: "ParamSet") -> bool:
        if self.params.keys() != other.params.keys() or self.buffers.keys() != other.buffers.keys():
            return False
        return all(np.array_equal(v, other.params[k]) for k, v in self.params.items()) and all(
            np.array_equal(v, other.buffers[k]) for k, v in self.buffers.items()
        )


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> ParamSet:
    """Glorot-uniform weights, zero biases, unit batch-norm scales."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    b: dict[str, np.ndarray] = {}
    if spec.family == BENCHMARK:
        p["freq"] = np.full((spec.K, 3), 1.0 / 3)
        return ParamSet(p).astype(dtype)
    check_shapes(spec)
    entry, body = conv_plan(spec)
    for layer in entry + body + inception_plan(spec.channels):
        rf = int(np.prod(layer.kernel))
        p[f"{layer.name}.w"] = _glorot(rng, layer.kernel + (layer.cin, layer.cout), rf * layer.cin, rf * layer.cout)
        p[f"{layer.name}.b"] = np.zeros(layer.cout)
        if layer.activate:
            p[f"{layer.name}.gamma"] = np.ones(layer.cout)
            p[f"{layer.name}.beta"] = np.zeros(layer.cout)
            b[f"{layer.name}.mean"] = np.zeros(layer.cout)
            b[f"{layer.name}.var"] = np.ones(layer.cout)
    H = spec.hidden
    n_in = 6 * spec.channels
    _init_lstm(p, "lstm", rng, n_in, H)
    if spec.head == SINGLE:
        p["dense.w"] = _glorot(rng, (H, 3), H, 3)
        p["dense.b"] = np.zeros(3)
    else:
        _init_lstm(p, "dec", rng, 3 + 2 * H, H)
        p["dec_dense.w"] = _glorot(rng, (3 * H, 3), 3 * H, 3)
        p["dec_dense.b"] = np.zeros(3)
    return ParamSet(p, b).astype(dtype)


def _init_lstm(p: dict, name: str, rng: np.random.Generator, n_in: int, H: int) -> None:
    # column blocks: [cell input, input gate g, forget gate f, output gate o]
    p[f"{name}.U"] = _glorot(rng, (n_in, 4 * H), n_in, 4 * H)
    p[f"{name}.W"] = _glorot(rng, (H, 4 * H), H, 4 * H)
    p[f"{name}.b"] = np.zeros(4 * H)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class _Ctx:
    """Per-call state: parameter tensors, mode, dropout RNG, BN updates."""

    def __init__(self, params: ParamSet, training: bool, rng: np.random.Generator | None, track: bool | None = None):
        self.ps = params
        track = training if track is None else track
        self.t = {k: Tensor(v, requires_grad=track) for k, v in params.params.items()}
        self.training = training
        self.rng = rng
        self.bn_updates: dict[str, np.ndarray] = {}


def conv_forward(x: Tensor, w: Tensor, b: Tensor | None = None, stride=None, padding=None) -> Tensor:
    """Channels-last convolution; see :func:`lobpredict.nn.tensor.conv`."""
    return tt.conv(x, w, b, stride, padding)


def _conv_block(ctx: _Ctx, layer: ConvLayer, x: Tensor) -> Tensor:
    t = ctx.t
    y = tt.conv(x, t[f"{layer.name}.w"], t[f"{layer.name}.b"], layer.stride, layer.padding)
    if not layer.activate:
        return y
    y = tt.leaky_relu(y, LEAKY_SLOPE)
    return _batch_norm(ctx, layer.name, y)


def _batch_norm(ctx: _Ctx, name: str, y: Tensor) -> Tensor:
    t, buf = ctx.t, ctx.ps.buffers
    if ctx.training:
        out, mu, var = tt.batch_norm(y, t[f"{name}.gamma"], t[f"{name}.beta"], eps=BN_EPS)
        m = BN_MOMENTUM
        ctx.bn_updates[f"{name}.mean"] = (m * buf[f"{name}.mean"] + (1 - m) * mu).astype(y.dtype)
        ctx.bn_updates[f"{name}.var"] = (m * buf[f"{name}.var"] + (1 - m) * var).astype(y.dtype)
        return out
    out, _, _ = tt.batch_norm(y, t[f"{name}.gamma"], t[f"{name}.beta"], buf[f"{name}.mean"], buf[f"{name}.var"], BN_EPS)
    return out


def inception_forward(ctx: _Ctx, x: Tensor) -> Tensor:
    """``(N, T, C)`` -> ``(N, T, 6C)``: MA(3), MA(5) and max-pool branches."""
    a, b_, c, d, e = inception_plan(x.shape[-1])
    y1 = _conv_block(ctx, b_, _conv_block(ctx, a, x))
    y2 = _conv_block(ctx, d, _conv_block(ctx, c, x))
    y3 = _conv_block(ctx, e, tt.maxpool_time(x, 3))
    return tt.concat([y1, y2, y3], axis=-1)


def lstm_cell(x_proj: Tensor, h: Tensor, s: Tensor, W: Tensor, H: int) -> tuple[Tensor, Tensor]:
    """One recurrence step given the precomputed input projection ``b + U z``."""
    a = tt.sigmoid(x_proj + tt.linear(h, W))
    cell, g, f, o = (a[:, k * H : (k + 1) * H] for k in range(4))
    s_new = g * cell + f * s
    return o * tt.tanh(s_new), s_new


def lstm_forward(z: Tensor, U: Tensor, W: Tensor, b: Tensor, h0: Tensor | None = None,
                 s0: Tensor | None = None) -> tuple[list[Tensor], list[Tensor]]:
    """Run an LSTM over ``z`` of shape ``(N, T', n)``; returns the h and s tracks."""
    N, T = z.shape[0], z.shape[1]
    H = W.shape[0]
    if T < 1:
        raise ValueError("LSTM needs at least one step")
    proj = tt.linear(z, U, b)
    zero = np.zeros((N, H), dtype=z.dtype)
    h = Tensor(zero) if h0 is None else h0
    s = Tensor(zero) if s0 is None else s0
    hs, ss = [], []
    for k in range(T):
        h, s = lstm_cell(proj[:, k], h, s, W, H)
        hs.append(h)
        ss.append(s)
    return hs, ss


def seq2seq_decode(ctx: _Ctx, h: Tensor, s: Tensor, K: int) -> Tensor:
    """Roll the decoder ``K`` steps from the encoder state; returns log-probs ``(N, K, 3)``."""
    t = ctx.t
    N, H = h.shape
    context = tt.concat([h, s], axis=-1)
    p = Tensor(np.tile(np.array([0.0, 1.0, 0.0], dtype=h.dtype), (N, 1)))
    outs = []
    for _ in range(K):
        x_proj = tt.linear(tt.concat([p, context], axis=-1), t["dec.U"], t["dec.b"])
        h, s = lstm_cell(x_proj, h, s, t["dec.W"], H)
        logp = tt.log_softmax(tt.linear(tt.concat([h, context], axis=-1), t["dec_dense.w"], t["dec_dense.b"]))
        outs.append(tt.reshape(logp, (N, 1, 3)))
        p = tt.exp(logp)
    return tt.concat(outs, axis=1)


def _dropout(ctx: _Ctx, x: Tensor) -> Tensor:
    if not ctx.training or ctx.rng is None or DROPOUT <= 0:
        return x
    keep = 1.0 - DROPOUT
    mask = (ctx.rng.random(x.shape) < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)
    return tt.scale_by(x, mask)


def encode(ctx: _Ctx, spec: ModelSpec, x: np.ndarray) -> tuple[Tensor, Tensor]:
    """Conv module, inception, dropout and LSTM; returns the final (h, s)."""
    expected = spec.input_shape
    if x.shape[1:] != expected:
        raise ShapeError(f"input layer: expected {expected}, got {x.shape[1:]}")
    entry, body = conv_plan(spec)
    y = Tensor(x[..., None])
    for layer in entry:
        y = _conv_block(ctx, layer, y)
        if layer.name == "queue":
            y = tt.reshape(y, y.shape[:4] + (y.shape[-1],))
    if entry:
        y = tt.reshape(y, (y.shape[0], y.shape[1], y.shape[2], y.shape[-1]))
    for layer in body:
        y = _conv_block(ctx, layer, y)
    N, T = y.shape[0], y.shape[1]
    y = tt.reshape(y, (N, T, y.shape[-1]))
    y = inception_forward(ctx, y)
    y = _dropout(ctx, y)
    t = ctx.t
    hs, ss = lstm_forward(y, t["lstm.U"], t["lstm.W"], t["lstm.b"])
    return hs[-1], ss[-1]


def forward_logp(spec: ModelSpec, params: ParamSet, x: np.ndarray, training: bool = False,
                 rng: np.random.Generator | None = None, track: bool | None = None) -> tuple[Tensor, _Ctx]:
    """Log-probabilities ``(N, 3)`` or ``(N, K, 3)`` and the call context.

    ``track`` records the graph for gradients (default: only when training).
    """
    ctx = _Ctx(params, training, rng, track)
    if spec.family == BENCHMARK:
        freq = params.params["freq"]
        with np.errstate(divide="ignore"):
            logp = np.log(np.maximum(freq, 1e-12))
        shape = (len(x), 3) if spec.head == SINGLE else (len(x), spec.K, 3)
        return Tensor(np.broadcast_to(logp.reshape((-1, 3) if spec.head == SEQ2SEQ else (3,)), shape).copy()), ctx
    x = np.asarray(x, dtype=next(iter(params.params.values())).dtype)
    h, s = encode(ctx, spec, x)
    if spec.head == SINGLE:
        t = ctx.t
        return tt.log_softmax(tt.linear(h, t["dense.w"], t["dense.b"])), ctx
    return seq2seq_decode(ctx, h, s, spec.K), ctx


def model_forward(spec: ModelSpec, params: ParamSet, x: np.ndarray | FeatureWindow) -> np.ndarray:
    """Inference-mode class probabilities for a batch or a single window."""
    single = isinstance(x, FeatureWindow)
    if single:
        if spec.family != BENCHMARK and x.tag != spec.representation:
            raise ShapeError(f"input layer: {spec.name} takes {spec.representation}, got {x.tag}")
        x = x.data[None]
    logp, _ = forward_logp(spec, params, x)
    out = np.exp(logp.data)
    return out[0] if single else out


def predict_proba(spec: ModelSpec, params: ParamSet, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    if len(x) == 0:
        return np.zeros((0, 3) if spec.head == SINGLE else (0, spec.K, 3))
    parts = [model_forward(spec, params, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(parts)


def with_dims(spec: ModelSpec, **dims) -> ModelSpec:
    return replace(spec, **dims)
