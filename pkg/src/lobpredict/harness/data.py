"""Loading LOBSTER sessions from a data root and caching their frames.

Layout: ``<root>/<TICKER>/<TICKER>_<date>_<start>_<end>_{message,orderbook}_<L>.csv``
as written by LOBSTER (and by :mod:`lobpredict.harness.synth`).
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import features as F
from ..ingest import ExclusionRange, clean_session, exclusions_for, parse_session
from ..store import TENSOR_MAGIC, read_container, write_container

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "LOBPREDICT_DATA"

_FILE_RE = re.compile(r"^(?P<ticker>[^_]+)_(?P<date>\d{4}-\d{2}-\d{2})_(?P<start>\d+)_(?P<end>\d+)_message_(?P<levels>\d+)\.csv$")


def data_root(root: str | os.PathLike | None = None) -> Path:
    """``root`` if given, else ``$LOBPREDICT_DATA``, else the working directory."""
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


@dataclass(frozen=True)
class SessionFiles:
    ticker: str
    date: str
    message: Path
    orderbook: Path
    levels: int
    start: float
    end: float


def discover(root: str | os.PathLike, ticker: str) -> list[SessionFiles]:
    """All sessions of ``ticker`` under ``root/ticker`` (or ``root`` itself), sorted by date."""
    root = Path(root)
    base = root / ticker if (root / ticker).is_dir() else root
    out = []
    for p in sorted(base.glob(f"{ticker}_*_message_*.csv")):
        m = _FILE_RE.match(p.name)
        if not m:
            continue
        ob = p.with_name(p.name.replace("_message_", "_orderbook_"))
        if not ob.exists():
            raise FileNotFoundError(f"order book file missing for {p.name}")
        out.append(
            SessionFiles(ticker, m["date"], p, ob, int(m["levels"]), int(m["start"]) / 1000, int(m["end"]) / 1000)
        )
    return sorted(out, key=lambda s: s.date)


@dataclass
class TickerData:
    """Materialised frames, rolling stats and mid-prices for one ticker."""

    ticker: str
    dates: list[str]
    frames: dict[str, F.SessionFrames]
    lob_stats: dict[str, F.RollingStats | None] = field(default_factory=dict)
    of_stats: dict[str, F.RollingStats | None] = field(default_factory=dict)


def load_frames(files: SessionFiles, levels: int = 10, window: int = 20, depth: int = 10, tick: int = 100,
                with_l3: bool = True, exclusions: Iterable[ExclusionRange] = ()) -> F.SessionFrames:
    messages, snapshots = parse_session(files.message, files.orderbook, files.levels)
    session = clean_session(
        messages, snapshots, (files.start, files.end), exclusions_for(exclusions, files.ticker, files.date), files.date
    )
    return F.materialize(session, levels, window, depth, tick, with_l3)


def prepare_ticker(root: str | os.PathLike, ticker: str, dates: Sequence[str] | None = None, *, levels: int = 10,
                   window: int = 20, depth: int = 10, tick: int = 100, with_l3: bool = True,
                   exclusions: Iterable[ExclusionRange] = (), lookback: int = 5,
                   cache: str | os.PathLike | None = None) -> TickerData:
    """Load (or read cached) frames for ``dates`` and compute rolling statistics.

    Rolling statistics for a date use the ``lookback`` preceding dates in the
    list, so the list should start with the warm-up days.
    """
    sessions = {s.date: s for s in discover(root, ticker)}
    dates = sorted(sessions) if dates is None else list(dates)
    missing = [d for d in dates if d not in sessions]
    if missing:
        raise FileNotFoundError(f"{ticker}: no session files for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    frames = {}
    for d in dates:
        path = None if cache is None else Path(cache) / ticker / f"{ticker}_{d}.lobt"
        if path is not None and path.exists():
            frames[d] = read_frames(path)
            continue
        frames[d] = load_frames(sessions[d], levels, window, depth, tick, with_l3, exclusions)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_frames(path, frames[d])
    ordered = [frames[d] for d in dates]
    lob = F.lob_stats(ordered, lookback)
    of = F.order_flow_stats(ordered, lookback)
    return TickerData(ticker, dates, frames, dict(zip(dates, lob)), dict(zip(dates, of)))


def write_frames(path: str | os.PathLike, frames: F.SessionFrames) -> Path:
    arrays = {
        "lob": frames.lob,
        "mid": frames.mid,
        "best_bid": frames.best_bid,
        "best_ask": frames.best_ask,
        "volume": frames.volume,
        "extrapolated": frames.extrapolated,
    }
    if frames.volume_l3 is not None:
        arrays["volume_l3"] = frames.volume_l3
    meta = {
        "date": frames.date,
        "levels": frames.levels,
        "window": frames.window,
        "depth": frames.depth,
        "tick": frames.tick,
        "dims": {k: list(v.shape) for k, v in arrays.items()},
    }
    return write_container(path, arrays, meta, TENSOR_MAGIC)


def read_frames(path: str | os.PathLike) -> F.SessionFrames:
    a, meta = read_container(path, TENSOR_MAGIC)
    return F.SessionFrames(
        meta["date"], meta["levels"], meta["window"], meta["depth"], meta["tick"],
        a["lob"], a["mid"], a["best_bid"], a["best_ask"], a["volume"], a.get("volume_l3"), a["extrapolated"],
    )


def write_dataset(path: str | os.PathLike, x: np.ndarray, y: np.ndarray, meta: dict) -> Path:
    """Feature tensor ``x`` and labels ``y`` in one container."""
    meta = dict(meta, dims={"x": list(x.shape), "y": list(y.shape)})
    return write_container(path, {"x": x, "y": y}, meta, TENSOR_MAGIC)


def read_dataset(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, dict]:
    a, meta = read_container(path, TENSOR_MAGIC)
    return a["x"], a["y"], meta
