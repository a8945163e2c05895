"""Order book representations over a look-back window.

A session is first materialised into per-event arrays (:class:`SessionFrames`),
one row per clean order book event.  Windows of length ``T`` are slices of
those arrays ending at the anchor event, oldest row first.

* raw LOB: ``(T, 4L)`` columns ``p_a^l, v_a^l, p_b^l, v_b^l`` for each level,
  z-scored with statistics of the previous five sessions;
* order flow: ``(T, 2L)`` columns ``aOF^l, bOF^l``, z-scored the same way;
* volume: ``(T, W, 2)`` volumes on the mid-relative tick grid (``[..., 0]``
  bid, ``[..., 1]`` ask, tick index increasing away from the mid), divided
  by the window maximum;
* volume L3: ``(T, W, 2, D)`` queue slots per tick, last slot aggregating the
  tail of the queue, divided by the same maximum tick volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .book import ASK, BID, iter_replay, tick_grid
from .ingest import CleanSession, SnapshotRecord

RAW_LOB = "rawLOB"
ORDER_FLOW = "orderflow"
VOLUME = "volume"
VOLUME_L3 = "volumeL3"
REPRESENTATIONS = (RAW_LOB, ORDER_FLOW, VOLUME, VOLUME_L3)

PRICE_SCALE = 10_000.0


class InsufficientHistory(ValueError):
    pass


@dataclass
class SessionFrames:
    """Per-event arrays for one clean session."""

    date: str
    levels: int
    window: int
    depth: int
    tick: int
    lob: np.ndarray  # (n, 4L) float64, prices in dollars
    mid: np.ndarray  # (n,) float64 dollars
    best_bid: np.ndarray  # (n,) int64
    best_ask: np.ndarray
    volume: np.ndarray  # (n, W, 2) int64
    volume_l3: np.ndarray | None = None  # (n, W, 2, D) int64
    extrapolated: np.ndarray | None = None  # (n,) number of filled-in levels

    def __len__(self) -> int:
        return len(self.mid)

    @property
    def order_flow(self) -> np.ndarray:
        return order_flow(self.lob)


@dataclass
class RollingStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # features whose std was 0 (scaled by 1 instead)
    count: int = 0

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class FeatureWindow:
    tag: str
    data: np.ndarray
    anchor: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = {RAW_LOB: 2, ORDER_FLOW: 2, VOLUME: 3, VOLUME_L3: 4}[self.tag]
        if self.data.ndim != expected:
            raise ValueError(f"{self.tag} window must be {expected}-d, got {self.data.shape}")

    @property
    def ofi(self) -> np.ndarray:
        """Order flow imbalance ``bOF - aOF`` per level (order flow windows only)."""
        if self.tag != ORDER_FLOW:
            raise ValueError("OFI is only defined for order flow windows")
        return self.meta["raw"][:, 1::2] - self.meta["raw"][:, 0::2]


# ---------------------------------------------------------------------------
# materialisation
# ---------------------------------------------------------------------------


def lob_matrix(snaps: Sequence[SnapshotRecord], levels: int, tick: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer ``(n, 4L)`` raw book plus the count of extrapolated levels per row.

    Missing levels get volume 0 and a price one tick beyond the previous one.
    """
    n = len(snaps)
    out = np.zeros((n, 4 * levels), dtype=np.int64)
    filled = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(snaps):
        row = out[i]
        pa = pb = None
        for l in range(levels):
            if l < len(s.asks):
                pa, va = s.asks[l]
            else:
                pa, va = pa + tick, 0
                filled[i] += 1
            if l < len(s.bids):
                pb, vb = s.bids[l]
            else:
                pb, vb = pb - tick, 0
                filled[i] += 1
            row[4 * l : 4 * l + 4] = (pa, va, pb, vb)
    return out, filled


def volume_matrix(lob: np.ndarray, best_bid: np.ndarray, best_ask: np.ndarray, window: int, tick: int) -> np.ndarray:
    """L2 volumes on the ``window`` tick prices either side of the mid."""
    n = lob.shape[0]
    levels = lob.shape[1] // 4
    m2 = best_bid + best_ask
    on_grid = m2 % (2 * tick) == 0
    b1 = np.where(on_grid, m2 // 2, (m2 - tick) // 2)
    a1 = np.where(on_grid, m2 // 2, (m2 + tick) // 2)
    out = np.zeros((n, window, 2), dtype=np.int64)
    rows = np.arange(n)
    for l in range(levels):
        pa, va, pb, vb = (lob[:, 4 * l + k] for k in range(4))
        jb = (b1 - pb) // tick
        ja = (pa - a1) // tick
        for j, v, x in ((jb, vb, 0), (ja, va, 1)):
            ok = (j >= 0) & (j < window) & (v > 0)
            out[rows[ok], j[ok], x] = v[ok]
    return out


def materialize(session: CleanSession, levels: int = 10, window: int = 20, depth: int = 10,
                tick: int = 100, with_l3: bool = True) -> SessionFrames:
    """Turn a clean session into per-event arrays (replaying L3 if requested)."""
    snaps = [e.snapshot for e in session.entries]
    n = len(snaps)
    if n:
        lob_int, filled = lob_matrix(snaps, levels, tick)
        best_bid = np.array([s.best_bid for s in snaps], dtype=np.int64)
        best_ask = np.array([s.best_ask for s in snaps], dtype=np.int64)
    else:
        lob_int = np.zeros((0, 4 * levels), dtype=np.int64)
        filled = np.zeros(0, dtype=np.int64)
        best_bid = best_ask = np.zeros(0, dtype=np.int64)
    vol = volume_matrix(lob_int, best_bid, best_ask, window, tick)
    lob = lob_int.astype(np.float64)
    lob[:, 0::2] /= PRICE_SCALE
    frames = SessionFrames(
        session.date, levels, window, depth, tick, lob,
        (best_bid + best_ask) / (2 * PRICE_SCALE), best_bid, best_ask, vol,
        extrapolated=filled,
    )
    if with_l3 and n:
        frames.volume_l3 = l3_matrix(session, window, depth, tick, levels)
    return frames


def l3_slots(state, window: int, depth: int) -> np.ndarray:
    """``(W, 2, D)`` queue slots of a book state on its mid-relative grid."""
    out = np.zeros((window, 2, depth), dtype=np.int64)
    bgrid, agrid = tick_grid(state.best_bid, state.best_ask, window, state.tick)
    tick = state.tick
    b1, a1 = int(bgrid[0]), int(agrid[0])
    for side, x, sign, first in ((state.bids, 0, BID, b1), (state.asks, 1, ASK, a1)):
        for price in side.queues:
            j = (first - price) // tick if sign == BID else (price - first) // tick
            if 0 <= j < window:
                out[j, x] = state.queue_slots(sign, price, depth)
    return out


def l3_matrix(session: CleanSession, window: int, depth: int, tick: int, levels: int) -> np.ndarray:
    rows = session.rows
    out = np.zeros((len(rows), window, 2, depth), dtype=np.int64)
    if not rows:
        return out
    k = 0
    target = rows[0]
    last = rows[-1]
    for i, state in iter_replay(session.messages, session.snapshots, tick, levels):
        if i == target:
            out[k] = l3_slots(state, window, depth)
            k += 1
            if k == len(rows):
                break
            target = rows[k]
        if i >= last:
            break
    return out


def order_flow(lob: np.ndarray) -> np.ndarray:
    """Multi-level ``(aOF^l, bOF^l)`` per event; row 0 has no predecessor (NaN)."""
    pa, va, pb, vb = (lob[:, k::4] for k in range(4))
    n, L = pa.shape
    out = np.full((n, 2 * L), np.nan)
    if n < 2:
        return out
    dpb = pb[1:] - pb[:-1]
    dpa = pa[1:] - pa[:-1]
    bof = np.where(dpb > 0, vb[1:], np.where(dpb == 0, vb[1:] - vb[:-1], -vb[:-1]))
    aof = np.where(dpa > 0, -va[:-1], np.where(dpa == 0, va[1:] - va[:-1], va[1:]))
    out[1:, 0::2] = aof
    out[1:, 1::2] = bof
    return out


# ---------------------------------------------------------------------------
# rolling normalisation
# ---------------------------------------------------------------------------


def _moments(x: np.ndarray) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Count, mean, centred sum of squares, min and max over non-NaN rows."""
    x = x[~np.isnan(x).any(axis=1)]
    n = len(x)
    if n == 0:
        z = np.zeros(x.shape[1])
        return 0, z, z, np.full(x.shape[1], np.inf), np.full(x.shape[1], -np.inf)
    mean = x.mean(axis=0)
    return n, mean, ((x - mean) ** 2).sum(axis=0), x.min(axis=0), x.max(axis=0)


def _combine(parts):
    n, mean, m2 = 0, None, None
    for nb, mb, m2b, *_ in parts:
        if nb == 0:
            continue
        if n == 0:
            n, mean, m2 = nb, mb.copy(), m2b.copy()
            continue
        delta = mb - mean
        tot = n + nb
        mean = mean + delta * nb / tot
        m2 = m2 + m2b + delta**2 * n * nb / tot
        n = tot
    return n, mean, m2


def rolling_stats(per_session: Sequence[np.ndarray], lookback: int = 5) -> list[RollingStats | None]:
    """Stats for session ``d`` pooled over sessions ``d-lookback .. d-1``.

    Returns ``None`` for the first ``lookback`` sessions (warm-up).
    """
    moments = [_moments(x) for x in per_session]
    out: list[RollingStats | None] = []
    for d in range(len(per_session)):
        if d < lookback:
            out.append(None)
            continue
        parts = moments[d - lookback : d]
        n, mean, m2 = _combine(parts)
        if n == 0:
            out.append(None)
            continue
        lo = np.min([p[3] for p in parts], axis=0)
        hi = np.max([p[4] for p in parts], axis=0)
        # exact test: rounding in the mean would leave a tiny spurious std
        constant = lo == hi
        mean = np.where(constant, lo, mean)
        std = np.where(constant, 1.0, np.sqrt(m2 / n))
        out.append(RollingStats(mean, std, constant, n))
    return out


def lob_stats(frames: Sequence[SessionFrames], lookback: int = 5) -> list[RollingStats | None]:
    return rolling_stats([f.lob for f in frames], lookback)


def order_flow_stats(frames: Sequence[SessionFrames], lookback: int = 5) -> list[RollingStats | None]:
    return rolling_stats([f.order_flow for f in frames], lookback)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def _check_anchor(t: int, T: int, n: int, first: int = 0) -> None:
    if t >= n:
        raise IndexError(f"anchor {t} beyond session of {n} events")
    if t - T + 1 < first:
        raise InsufficientHistory(f"anchor {t} needs {T} events of history (first usable row {first})")


def build_raw_lob(frames: SessionFrames, t: int, T: int, stats: RollingStats, levels: int | None = None) -> FeatureWindow:
    levels = frames.levels if levels is None else levels
    _check_anchor(t, T, len(frames))
    if stats is None:
        raise InsufficientHistory("no rolling statistics (warm-up session)")
    cols = slice(0, 4 * levels)
    raw = frames.lob[t - T + 1 : t + 1, cols]
    data = (raw - stats.mean[cols]) / stats.std[cols]
    return FeatureWindow(RAW_LOB, data, t, {"flagged": int(frames.extrapolated[t - T + 1 : t + 1].sum())})


def build_order_flow(frames: SessionFrames, t: int, T: int, stats: RollingStats, levels: int | None = None) -> FeatureWindow:
    levels = frames.levels if levels is None else levels
    _check_anchor(t, T, len(frames), first=1)
    if stats is None:
        raise InsufficientHistory("no rolling statistics (warm-up session)")
    cols = slice(0, 2 * levels)
    raw = frames.order_flow[t - T + 1 : t + 1, cols]
    data = (raw - stats.mean[cols]) / stats.std[cols]
    return FeatureWindow(ORDER_FLOW, data, t, {"raw": raw})


def gray_scale(block: np.ndarray, scale_axes_from: int = 1) -> tuple[np.ndarray, bool]:
    m = block.max() if block.size else 0
    if m <= 0:
        return block.astype(np.float64), True
    return block / m, False


def build_volume(frames: SessionFrames, t: int, T: int, W: int | None = None, depth: int | None = None) -> FeatureWindow:
    """Volume (``depth=None``) or L3 volume window, gray-scale normalised.

    L3 slots are divided by the largest tick volume of the window, the same
    scalar the L2 tensor uses, so summing slots recovers the L2 tensor.
    """
    W = frames.window if W is None else W
    _check_anchor(t, T, len(frames))
    vol = frames.volume[t - T + 1 : t + 1, :W]
    m = vol.max() if vol.size else 0
    flat = m <= 0
    scale = 1.0 if flat else float(m)
    if depth is None:
        return FeatureWindow(VOLUME, vol / scale, t, {"max": int(m), "all_zero": flat})
    if frames.volume_l3 is None:
        raise ValueError("session was materialised without L3 queues")
    if depth > frames.depth:
        raise ValueError(f"depth {depth} exceeds materialised depth {frames.depth}")
    slots = frames.volume_l3[t - T + 1 : t + 1, :W]
    if depth < frames.depth:
        slots = np.concatenate([slots[..., : depth - 1], slots[..., depth - 1 :].sum(-1, keepdims=True)], axis=-1)
    return FeatureWindow(VOLUME_L3, slots / scale, t, {"max": int(m), "all_zero": flat})


def stack_windows(frames: SessionFrames, anchors: np.ndarray, tag: str, T: int,
                  stats: RollingStats | None = None, levels: int | None = None,
                  W: int | None = None, depth: int | None = None, dtype=np.float32) -> np.ndarray:
    """Vectorised batch of windows, ``(len(anchors), T, ...)``."""
    anchors = np.asarray(anchors, dtype=np.int64)
    n = len(frames)
    first = 1 if tag == ORDER_FLOW else 0
    if len(anchors) and (anchors.min() - T + 1 < first or anchors.max() >= n):
        raise InsufficientHistory("anchor outside the usable range of the session")
    if tag in (RAW_LOB, ORDER_FLOW):
        if stats is None:
            raise InsufficientHistory("no rolling statistics (warm-up session)")
        levels = frames.levels if levels is None else levels
        if tag == RAW_LOB:
            cols = slice(0, 4 * levels)
            base = frames.lob[:, cols]
        else:
            cols = slice(0, 2 * levels)
            base = frames.order_flow[:, cols]
        z = (base - stats.mean[cols]) / stats.std[cols]
        win = sliding_window_view(z, T, axis=0)  # (n-T+1, F, T)
        return np.ascontiguousarray(win[anchors - T + 1].transpose(0, 2, 1), dtype=dtype)
    W = frames.window if W is None else W
    vol = frames.volume[:, :W]
    win = sliding_window_view(vol, T, axis=0)[anchors - T + 1]  # (N, W, 2, T)
    scale = win.reshape(len(anchors), -1).max(axis=1).astype(np.float64)
    scale[scale <= 0] = 1.0
    if tag == VOLUME:
        out = win.transpose(0, 3, 1, 2) / scale[:, None, None, None]
        return np.ascontiguousarray(out, dtype=dtype)
    if tag != VOLUME_L3:
        raise ValueError(f"unknown representation {tag!r}")
    depth = frames.depth if depth is None else depth
    slots = frames.volume_l3[:, :W]
    if depth < frames.depth:
        slots = np.concatenate([slots[..., : depth - 1], slots[..., depth - 1 :].sum(-1, keepdims=True)], axis=-1)
    idx = anchors[:, None] + np.arange(-T + 1, 1)[None, :]
    out = slots[idx] / scale[:, None, None, None, None]
    return np.ascontiguousarray(out, dtype=dtype)
