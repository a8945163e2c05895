"""Rolling-window experiments: train every model per window, evaluate, run the MCS."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np

from .. import features as F
from ..ingest import ExclusionRange
from ..labels import PAPER, ReturnSpec, alpha_hat, classify, return_series
from ..mcs import DegeneratePanel, LossPanel, MCSResult, mcs_run, window_loss
from ..nn.model import BENCHMARK, SEQ2SEQ, SINGLE, ModelSpec, ParamSet, predict_proba
from ..nn.train import TrainConfig, TrainingDiverged, train_model
from .data import TickerData, data_root, discover, prepare_ticker
from .windows import Window, build_windows

logger = logging.getLogger(__name__)

HORIZONS = (10, 20, 30, 50, 100, 200, 300, 500, 1000)
SEQ2SEQ_HORIZONS = (10, 20, 30, 50, 100)

# (family, level, head) triples
BASE_MODELS = (
    (BENCHMARK, None, SINGLE),
    ("deepLOB", "L1", SINGLE),
    ("deepOF", "L1", SINGLE),
    ("deepLOB", "L2", SINGLE),
    ("deepOF", "L2", SINGLE),
    ("deepVOL", "L2", SINGLE),
    ("deepVOL-L3", "L3", SINGLE),
)
SEQ2SEQ_MODELS = tuple((f, l, SEQ2SEQ) for f, l, _ in BASE_MODELS[1:])


@dataclass(frozen=True)
class ExperimentConfig:
    tickers: tuple[str, ...] = ()
    horizons: tuple[int, ...] = HORIZONS
    models: tuple[tuple[str, str | None, str], ...] = BASE_MODELS
    seq2seq_horizons: tuple[int, ...] = SEQ2SEQ_HORIZONS
    T: int = 100
    L: int = 10
    W: int = 20
    D: int = 10
    channels: int = 32
    hidden: int = 64
    train: TrainConfig = TrainConfig()
    seed: int = 0
    subsample: int = 10
    warmup_weeks: int = 1
    val_days: int = 5
    in_sample: tuple[str, ...] = ()
    out_of_sample: tuple[str, ...] = ()
    variant: str = PAPER
    k: int = 5
    alphas: tuple[float, ...] = (0.05, 0.01)
    B: int = 10_000
    block: int | None = None
    tick: int = 100
    lookback: int = 5
    data_root: str | None = None
    cache: str | None = None
    exclusions: tuple[ExclusionRange, ...] = ()

    def __post_init__(self):
        if self.subsample < 1:
            raise ValueError("subsample factor must be at least 1")
        if any(b <= a for a, b in zip(self.seq2seq_horizons, self.seq2seq_horizons[1:])):
            raise ValueError("seq2seq horizons must be strictly increasing")

    def model_specs(self) -> list[ModelSpec]:
        return [
            ModelSpec(f, l, h, T=self.T, L=self.L, W=self.W, D=self.D,
                      K=len(self.seq2seq_horizons) if h == SEQ2SEQ else 1,
                      channels=self.channels, hidden=self.hidden)
            for f, l, h in self.models
        ]

    @property
    def needs_l3(self) -> bool:
        return any(f == "deepVOL-L3" for f, _, _ in self.models)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exclusions"] = [asdict(e) for e in self.exclusions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "train" in d and isinstance(d["train"], dict):
            d["train"] = TrainConfig(**d["train"])
        if "exclusions" in d:
            d["exclusions"] = tuple(ExclusionRange(**e) for e in d["exclusions"])
        if "models" in d:
            d["models"] = tuple(tuple(m) for m in d["models"])
        for key in ("tickers", "horizons", "seq2seq_horizons", "in_sample", "out_of_sample", "alphas"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    windows: list[Window]
    panels: dict[tuple[str, int], LossPanel] = field(default_factory=dict)
    mcs: dict[tuple[str, int], MCSResult] = field(default_factory=dict)
    invalid: dict[tuple[str, int], list[int]] = field(default_factory=dict)
    thresholds: dict[tuple[str, int, int], float] = field(default_factory=dict)
    train_sources: dict[int, tuple[str, ...]] = field(default_factory=dict)
    universal: bool = False

    def benchmark_pvalue(self, ticker: str, horizon: int) -> float:
        return self.mcs[(ticker, horizon)].pvalues[BENCHMARK]

    def predictable(self, ticker: str, horizon: int, alpha: float = 0.05) -> bool:
        return self.benchmark_pvalue(ticker, horizon) < alpha


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------


def valid_anchors(n: int, T: int, spec: ReturnSpec) -> np.ndarray:
    """Anchors with a full look-back (plus one predecessor event) and a complete return stencil."""
    back, ahead = spec.stencil()
    lo = max(T, back)
    hi = n - ahead
    return np.arange(lo, max(lo, hi), dtype=np.int64)


def subsample_anchors(anchors: np.ndarray, factor: int) -> np.ndarray:
    """Every ``factor``-th anchor starting from the first labelable one."""
    if factor < 1:
        raise ValueError("subsample factor must be at least 1")
    return anchors[::factor]


class _Labels:
    """Per-session returns cached by horizon."""

    def __init__(self, data: TickerData, cfg: ExperimentConfig):
        self.data = data
        self.cfg = cfg
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def spec(self, h: int) -> ReturnSpec:
        return ReturnSpec(self.cfg.variant, h, self.cfg.k)

    def returns(self, date: str, h: int) -> np.ndarray:
        key = (date, h)
        if key not in self._cache:
            self._cache[key] = return_series(self.data.frames[date].mid, self.spec(h))
        return self._cache[key]

    def anchors(self, date: str, h: int) -> np.ndarray:
        return valid_anchors(len(self.data.frames[date]), self.cfg.T, self.spec(h))

    def alpha(self, days: Sequence[str], h: int, window: int) -> float:
        r = np.concatenate([self.returns(d, h)[self.anchors(d, h)] for d in days])
        return alpha_hat(r, h, window, self.data.ticker).alpha


def _features(data: TickerData, date: str, anchors: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if spec.family == BENCHMARK:
        return np.zeros((len(anchors), 0), dtype=np.float32)
    frames = data.frames[date]
    rep = spec.representation
    stats = None
    if rep == F.RAW_LOB:
        stats = data.lob_stats[date]
    elif rep == F.ORDER_FLOW:
        stats = data.of_stats[date]
    if rep in (F.RAW_LOB, F.ORDER_FLOW) and stats is None:
        raise F.InsufficientHistory(f"{data.ticker} {date}: no rolling statistics (needs warm-up days)")
    return F.stack_windows(frames, anchors, rep, spec.T, stats, levels=spec.levels_used, W=spec.W,
                           depth=spec.D if rep == F.VOLUME_L3 else None)


def build_split(data: TickerData, labels: _Labels, days: Sequence[str], spec: ModelSpec, horizons: Sequence[int],
                alphas: Sequence[float], factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels over ``days``, anchors thinned by ``factor``."""
    xs, ys = [], []
    for d in days:
        anchors = subsample_anchors(labels.anchors(d, max(horizons)), factor)
        if len(anchors) == 0:
            continue
        xs.append(_features(data, d, anchors, spec))
        ys.append(np.stack([classify(labels.returns(d, h)[anchors], a) for h, a in zip(horizons, alphas)], axis=1))
    if not xs:
        return np.zeros((0,) + spec.input_shape, dtype=np.float32), np.zeros((0, len(horizons)), dtype=np.int64)
    y = np.concatenate(ys)
    return np.concatenate(xs), (y[:, 0] if spec.head == SINGLE else y)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _test_probs(data: TickerData, labels: _Labels, days: Sequence[str], spec: ModelSpec, params: ParamSet,
                h: int) -> np.ndarray:
    """Predictions over the full test days at horizon ``h`` (head ``h`` for seq2seq)."""
    out = []
    for d in days:
        anchors = labels.anchors(d, h)
        if len(anchors) == 0:
            continue
        for i in range(0, len(anchors), 4096):
            chunk = anchors[i : i + 4096]
            p = predict_proba(spec, params, _features(data, d, chunk, spec))
            if spec.head == SEQ2SEQ:
                p = p[:, labels.cfg.seq2seq_horizons.index(h)]
            out.append(p)
    return np.concatenate(out) if out else np.zeros((0, 3))


def _test_labels(labels: _Labels, days: Sequence[str], h: int, alpha: float) -> np.ndarray:
    parts = [classify(labels.returns(d, h)[labels.anchors(d, h)], alpha) for d in days]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def load_universe(cfg: ExperimentConfig, tickers: Iterable[str]) -> tuple[dict[str, TickerData], list[str]]:
    root = data_root(cfg.data_root)
    out = {}
    calendar = None
    for t in tickers:
        dates = [s.date for s in discover(root, t)]
        calendar = dates if calendar is None else [d for d in calendar if d in set(dates)]
    if not calendar:
        raise FileNotFoundError(f"no sessions found under {root}")
    for t in tickers:
        out[t] = prepare_ticker(root, t, calendar, levels=cfg.L, window=cfg.W, depth=cfg.D, tick=cfg.tick,
                                with_l3=cfg.needs_l3, exclusions=cfg.exclusions, lookback=cfg.lookback,
                                cache=cfg.cache)
    return out, calendar


def _mcs_for(result: ExperimentResult, key: tuple[str, int], losses: dict[str, list[float]], valid: list[int],
             sizes: list[int], cfg: ExperimentConfig) -> None:
    models = list(losses)
    keep = [i for i, ok in enumerate(valid) if ok]
    result.invalid[key] = [result.windows[i].index for i, ok in enumerate(valid) if not ok]
    if result.invalid[key]:
        logger.warning("%s h=%d: windows %s dropped from the panel", key[0], key[1], result.invalid[key])
    panel = LossPanel(models, np.array([[losses[m][i] for i in keep] for m in models]).reshape(len(models), len(keep)),
                      np.array([sizes[i] for i in keep]))
    result.panels[key] = panel
    if panel.n_windows >= 2:
        try:
            result.mcs[key] = mcs_run(panel, cfg.alphas, cfg.B, cfg.block, _seed(cfg.seed, 7919, key[1]))
        except DegeneratePanel as exc:
            logger.warning("%s h=%d: %s", key[0], key[1], exc)
    else:
        logger.warning("%s h=%d: fewer than two valid windows, no MCS", *key)


def run_experiment(cfg: ExperimentConfig, data: dict[str, TickerData] | None = None,
                   calendar: Sequence[str] | None = None) -> ExperimentResult:
    """Stock-specific models for every ticker, window, horizon and model."""
    if data is None:
        data, calendar = load_universe(cfg, cfg.tickers)
    windows = build_windows(calendar, cfg.seed, cfg.warmup_weeks, cfg.val_days)
    result = ExperimentResult(cfg, windows)
    specs = cfg.model_specs()
    for ti, ticker in enumerate(cfg.tickers):
        td = data[ticker]
        labels = _Labels(td, cfg)
        per_h = {h: ({s.name: [] for s in specs if _applies(s, h, cfg)}, [], []) for h in cfg.horizons}
        for w in windows:
            alphas = {}
            for h in set(cfg.horizons) | set(cfg.seq2seq_horizons if _any_seq2seq(specs) else ()):
                alphas[h] = labels.alpha(w.train_days, h, w.index)
                result.thresholds[(ticker, h, w.index)] = alphas[h]
            trained = _train_all(specs, td, labels, w, alphas, cfg, (ti,))
            _evaluate(result, per_h, specs, trained, td, labels, w, alphas, cfg)
        for h, (losses, valid, sizes) in per_h.items():
            _mcs_for(result, (ticker, h), losses, valid, sizes, cfg)
    return result


def _applies(spec: ModelSpec, h: int, cfg: ExperimentConfig) -> bool:
    return spec.head == SINGLE or h in cfg.seq2seq_horizons


def _any_seq2seq(specs: Sequence[ModelSpec]) -> bool:
    return any(s.head == SEQ2SEQ for s in specs)


def _train_all(specs, td_or_list, labels_or_list, w: Window, alphas, cfg: ExperimentConfig, salt: tuple) -> dict:
    """Train every (model, horizon) for one window; ``None`` marks a failed run."""
    pool = td_or_list if isinstance(td_or_list, list) else [(td_or_list, labels_or_list, alphas)]
    trained: dict[tuple[str, int], ParamSet | None] = {}
    for mi, spec in enumerate(specs):
        hs_list = [SEQ2SEQ] if spec.head == SEQ2SEQ else list(cfg.horizons)
        for hi, h in enumerate(hs_list):
            horizons = tuple(cfg.seq2seq_horizons) if spec.head == SEQ2SEQ else (h,)
            parts_tr, parts_va = [], []
            for td, lab, al in pool:
                a = [al[x] for x in horizons]
                parts_tr.append(build_split(td, lab, w.train_days, spec, horizons, a, cfg.subsample))
                parts_va.append(build_split(td, lab, w.val_days, spec, horizons, a, cfg.subsample))
            tr = tuple(np.concatenate(z) for z in zip(*parts_tr))
            va = tuple(np.concatenate(z) for z in zip(*parts_va))
            if spec.family == BENCHMARK:
                # no early stopping to drive: frequencies over the whole train-val block
                tr = tuple(np.concatenate(z) for z in zip(tr, va))
            tcfg = replace(cfg.train, seed=_seed(cfg.seed, *salt, w.index, mi, hi))
            key = (spec.name, SEQ2SEQ if spec.head == SEQ2SEQ else h)
            try:
                params, hist = train_model(spec, tr, va, tcfg)
                trained[key] = params
            except (TrainingDiverged, ValueError) as exc:
                logger.error("window %d %s h=%s failed: %s", w.index, spec.name, key[1], exc)
                trained[key] = None
    return trained


def _evaluate(result, per_h, specs, trained, td, labels, w, alphas, cfg) -> None:
    for h in cfg.horizons:
        losses, valid, sizes = per_h[h]
        y = _test_labels(labels, w.test_days, h, alphas[h])
        ok = len(y) > 0
        row = {}
        for spec in specs:
            if spec.name not in losses:
                continue
            params = trained[(spec.name, SEQ2SEQ if spec.head == SEQ2SEQ else h)]
            if params is None or not ok:
                ok = False
                row[spec.name] = np.nan
                continue
            p = _test_probs(td, labels, w.test_days, spec, params, h)
            row[spec.name] = window_loss(p, y)
        for name in losses:
            losses[name].append(row.get(name, np.nan))
        valid.append(ok)
        sizes.append(len(y))


def run_universal(cfg: ExperimentConfig, data: dict[str, TickerData] | None = None,
                  calendar: Sequence[str] | None = None) -> ExperimentResult:
    """Models trained on pooled in-sample tickers, evaluated on every ticker."""
    if not cfg.in_sample:
        raise ValueError("universal runs need an in-sample ticker set")
    everyone = tuple(dict.fromkeys(cfg.in_sample + cfg.out_of_sample))
    if data is None:
        data, calendar = load_universe(cfg, everyone)
    windows = build_windows(calendar, cfg.seed, cfg.warmup_weeks, cfg.val_days)
    result = ExperimentResult(cfg, windows, universal=True)
    specs = cfg.model_specs()
    labels = {t: _Labels(data[t], cfg) for t in everyone}
    needed = set(cfg.horizons) | set(cfg.seq2seq_horizons if _any_seq2seq(specs) else ())
    per_t = {t: {h: ({s.name: [] for s in specs if _applies(s, h, cfg)}, [], []) for h in cfg.horizons} for t in everyone}
    for w in windows:
        alphas = {}
        for t in everyone:
            alphas[t] = {h: labels[t].alpha(w.train_days, h, w.index) for h in needed}
            for h in needed:
                result.thresholds[(t, h, w.index)] = alphas[t][h]
        pool = [(data[t], labels[t], alphas[t]) for t in cfg.in_sample]
        result.train_sources[w.index] = tuple(sorted(td.ticker for td, _, _ in pool))
        trained = _train_all(specs, pool, None, w, None, cfg, (10_007,))
        for t in everyone:
            _evaluate(result, per_t[t], specs, trained, data[t], labels[t], w, alphas[t], cfg)
    for t in everyone:
        for h, (losses, valid, sizes) in per_t[t].items():
            _mcs_for(result, (t, h), losses, valid, sizes, cfg)
    return result
