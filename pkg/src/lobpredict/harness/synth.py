"""Synthetic LOBSTER sessions with an optional planted order book signal.

The generator runs a full-depth book and writes what LOBSTER would: one
message row per book action and the first ``levels`` levels after it.

Mid-price moves come only from "move" steps, which happen with a fixed
probability per step and shift the mid by exactly half a tick: either a
market order sweeps the whole best level (the next tick is always occupied)
or a limit order improves the quote by one tick.  The direction of a move is
up with probability ``0.5 + feedback * I`` where ``I`` is the first-level
volume imbalance, so ``feedback = 0`` gives a driftless mid whose changes do
not depend on the book, while ``feedback > 0`` plants order book driven
predictability.  All other steps (submissions behind the quote, cancels
and partial executions that never empty a protected level, hidden
executions) leave the mid unchanged.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..book import ASK, BID, Side
from ..ingest import (
    CANCEL,
    DELETE,
    EXECUTE,
    EXECUTE_HIDDEN,
    MARKET_CLOSE,
    MARKET_OPEN,
    SUBMIT,
    MessageRecord,
    SnapshotRecord,
    write_session,
)

_NS = 1_000_000_000


@dataclass(frozen=True)
class SynthSpec:
    event_rate: float = 1.0  # book events per second
    session_length: float = MARKET_CLOSE - MARKET_OPEN
    tick: int = 100
    start_price: int = 1_000_000  # $100.00 in 1e-4 units
    dense_ticks: int = 12  # first ticks per side that never empty
    extra_ticks: int = 6  # submissions may land this far past the dense band
    levels: int = 10
    move_prob: float = 0.2
    hidden_prob: float = 0.01
    feedback: float = 0.0
    lot: int = 100
    max_lots: int = 5
    seed: int = 0
    open_time: float = MARKET_OPEN

    def __post_init__(self):
        for name in ("move_prob", "hidden_prob"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.move_prob + self.hidden_prob >= 1.0:
            raise ValueError("move_prob + hidden_prob must be below 1")
        if self.event_rate <= 0 or self.session_length <= 0:
            raise ValueError("event rate and session length must be positive")
        if self.dense_ticks < 2:
            raise ValueError("need at least two dense ticks per side")

    @property
    def n_events(self) -> int:
        return int(round(self.event_rate * self.session_length))


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.bids = Side(BID)
        self.asks = Side(ASK)
        self.orders: dict[int, tuple[Side, int]] = {}
        self.next_id = 1
        self.messages: list[MessageRecord] = []
        self.snapshots: list[SnapshotRecord] = []
        self.now = 0

    # -- primitive actions, each emits one message + snapshot -----------
    def _emit(self, etype, oid, size, price, direction):
        self.messages.append(MessageRecord(self.now, etype, oid, size, price, direction))
        L = self.spec.levels
        self.snapshots.append(SnapshotRecord(L, tuple(self.asks.levels(L)), tuple(self.bids.levels(L))))

    def _size(self) -> int:
        return int(self.rng.integers(1, self.spec.max_lots + 1)) * self.spec.lot

    def submit(self, side: Side, price: int, size: int | None = None) -> None:
        size = self._size() if size is None else size
        oid = self.next_id
        self.next_id += 1
        side.add_level(price)[oid] = size
        side.volume[price] += size
        self.orders[oid] = (side, price)
        self._emit(SUBMIT, oid, size, price, side.sign)

    def _reduce(self, side: Side, price: int, oid: int, amount: int, etype: int) -> None:
        q = side.queues[price]
        left = q[oid] - amount
        if left == 0:
            del q[oid]
            del self.orders[oid]
            if not q:
                side.remove_level(price)
        else:
            q[oid] = left
        if price in side.volume:
            side.volume[price] -= amount
        self._emit(etype, oid, amount, price, side.sign)

    def execute(self, side: Side, amount: int) -> None:
        """Market order against ``side``'s best level, FIFO, one row per fill."""
        price = side.price_at(0)
        while amount > 0:
            q = side.queues[price]
            oid, have = next(iter(q.items()))
            take = min(have, amount)
            amount -= take
            self._reduce(side, price, oid, take, EXECUTE)

    # -- book helpers -----------------------------------------------------
    def tick_price(self, side: Side, j: int) -> int:
        """Price ``j`` ticks behind the best quote of ``side``."""
        best = side.price_at(0)
        return best - j * self.spec.tick if side.sign == BID else best + j * self.spec.tick

    def refill(self, side: Side) -> None:
        for j in range(self.spec.dense_ticks):
            p = self.tick_price(side, j)
            if p not in side.queues:
                self.submit(side, p)

    def seed_book(self) -> None:
        s = self.spec
        best_bid = (s.start_price // s.tick) * s.tick
        best_ask = best_bid + s.tick
        n = s.dense_ticks + s.extra_ticks
        for j in range(n):
            for side, p in ((self.bids, best_bid - j * s.tick), (self.asks, best_ask + j * s.tick)):
                for _ in range(int(self.rng.integers(1, 4))):
                    self.submit(side, p)

    # -- steps ------------------------------------------------------------
    def move_step(self) -> None:
        s = self.spec
        vb = self.bids.volume[self.bids.price_at(0)]
        va = self.asks.volume[self.asks.price_at(0)]
        imbalance = (vb - va) / (vb + va)
        p_up = min(max(0.5 + s.feedback * imbalance, 0.02), 0.98)
        up = self.rng.random() < p_up
        spread = (self.asks.price_at(0) - self.bids.price_at(0)) // s.tick
        improve = spread > 1 and self.rng.random() < 1.0 - 1.0 / spread
        if improve:
            if up:
                self.submit(self.bids, self.bids.price_at(0) + s.tick)
            else:
                self.submit(self.asks, self.asks.price_at(0) - s.tick)
        else:
            side = self.asks if up else self.bids
            self.execute(side, side.volume[side.price_at(0)])
            self.refill(side)

    def quiet_step(self) -> None:
        s = self.spec
        side = self.bids if self.rng.random() < 0.5 else self.asks
        u = self.rng.random()
        if u < 0.5:
            j = int(self.rng.integers(0, s.dense_ticks + s.extra_ticks))
            self.submit(side, self.tick_price(side, j))
            return
        if u < 0.85:
            keys = side.keys
            k = keys[int(self.rng.integers(0, len(keys)))]
            price = -k if side.sign == BID else k
            q = side.queues[price]
            oids = list(q)
            oid = oids[int(self.rng.integers(0, len(oids)))]
            size = q[oid]
            j = abs(price - side.price_at(0)) // s.tick
            protected = j < s.dense_ticks
            if len(q) > 1 or not protected:
                if self.rng.random() < 0.7 or size <= s.lot:
                    self._reduce(side, price, oid, size, DELETE)
                    return
            if size > s.lot:
                cut = int(self.rng.integers(1, size // s.lot)) * s.lot
                self._reduce(side, price, oid, cut, CANCEL)
                return
            self.submit(side, self.tick_price(side, int(self.rng.integers(0, s.dense_ticks))))
            return
        best = side.price_at(0)
        vol = side.volume[best]
        if vol > s.lot:
            amount = int(self.rng.integers(1, vol // s.lot)) * s.lot
            self.execute(side, amount)
        else:
            self.submit(side, best)

    def hidden_step(self) -> None:
        side = self.bids if self.rng.random() < 0.5 else self.asks
        self._emit(EXECUTE_HIDDEN, 0, self._size(), side.price_at(0), side.sign)

    def run(self) -> tuple[list[MessageRecord], list[SnapshotRecord]]:
        s = self.spec
        n = s.n_events
        gaps = self.rng.exponential(1.0, size=n + 1)
        times = np.cumsum(gaps)
        times = s.open_time + times[:-1] / times[-1] * s.session_length
        times_ns = np.round(times * _NS).astype(np.int64)
        # strictly increasing so that only deliberate bursts share a timestamp
        times_ns = np.maximum.accumulate(times_ns + np.arange(n))
        self.now = int(times_ns[0]) - 1
        self.seed_book()
        draws = self.rng.random(n)
        for i in range(n):
            self.now = int(times_ns[i])
            u = draws[i]
            if u < s.move_prob:
                self.move_step()
            elif u < s.move_prob + s.hidden_prob:
                self.hidden_step()
            else:
                self.quiet_step()
        return self.messages, self.snapshots


def synth_generate(spec: SynthSpec) -> tuple[list[MessageRecord], list[SnapshotRecord]]:
    """Generate one session's message and snapshot records.

    The opening book is seeded with submissions stamped just before the
    first event, so they fall inside the open auction edge that cleaning
    discards anyway.
    """
    return _Generator(spec).run()


def lobster_filenames(ticker: str, date: str, levels: int, start: float = MARKET_OPEN, end: float = MARKET_CLOSE):
    stem = f"{ticker}_{date}_{int(start * 1000)}_{int(end * 1000)}"
    return f"{stem}_message_{levels}.csv", f"{stem}_orderbook_{levels}.csv"


def write_synth_session(spec: SynthSpec, directory: str | os.PathLike, ticker: str, date: str) -> tuple[Path, Path]:
    messages, snapshots = synth_generate(spec)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mname, oname = lobster_filenames(ticker, date, spec.levels)
    write_session(messages, snapshots, directory / mname, directory / oname)
    return directory / mname, directory / oname


def synth_universe(
    root: str | os.PathLike,
    tickers: Sequence[str],
    dates: Sequence[str],
    spec: SynthSpec,
    feedback: dict[str, float] | None = None,
) -> dict[str, list[str]]:
    """Write sessions for every ticker and date under ``root/<ticker>/``.

    Each (ticker, date) gets its own seed derived from ``spec.seed``; the
    opening price of a day is the previous day's start price, which keeps
    rolling normalisation statistics comparable across days.
    """
    out = {}
    ss = np.random.SeedSequence(spec.seed)
    children = ss.spawn(len(tickers))
    for ticker, child in zip(tickers, children):
        seeds = child.generate_state(len(dates))
        kappa = spec.feedback if feedback is None else feedback.get(ticker, spec.feedback)
        for date, sd in zip(dates, seeds):
            write_synth_session(replace(spec, seed=int(sd), feedback=kappa), Path(root) / ticker, ticker, date)
        out[ticker] = list(dates)
    return out
