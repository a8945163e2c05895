"""Event-sourced L3 order book with tick-grid helpers and snapshot reconciliation.

Only the first ``levels`` price levels per side are tracked, mirroring what
LOBSTER order book files expose.  Liquidity pushed beyond that range is
forgotten; when a price comes back into range its queue is rebuilt as a
single aggregated (synthetic) order holding the visible volume.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .ingest import (
    CANCEL,
    CROSS,
    DELETE,
    EXECUTE,
    EXECUTE_HIDDEN,
    HALT,
    SUBMIT,
    MessageRecord,
    SnapshotRecord,
)

BID = 1
ASK = -1


class BookError(ValueError):
    """The message stream is inconsistent with the reconstructed book."""


@dataclass(frozen=True)
class TickGrid:
    tick: int = 100  # 1e-4 dollar units, 100 = $0.01

    def __post_init__(self):
        if self.tick <= 0:
            raise ValueError("tick size must be positive")

    def on_grid(self, price: int) -> bool:
        return price % self.tick == 0


class Side:
    """One side of the book: price -> insertion-ordered {order_id: size}.

    ``keys`` holds priority keys sorted best-first (``-price`` for bids,
    ``price`` for asks) so both sides share the same bisect logic.
    """

    __slots__ = ("sign", "queues", "volume", "keys")

    def __init__(self, sign: int):
        self.sign = sign
        self.queues: dict[int, dict[int, int]] = {}
        self.volume: dict[int, int] = {}
        self.keys: list[int] = []

    def key(self, price: int) -> int:
        return -price if self.sign == BID else price

    def price_at(self, i: int) -> int:
        k = self.keys[i]
        return -k if self.sign == BID else k

    @property
    def best(self) -> int | None:
        if not self.keys:
            return None
        return self.price_at(0)

    def __len__(self) -> int:
        return len(self.keys)

    def levels(self, n: int) -> list[tuple[int, int]]:
        vol = self.volume
        if self.sign == BID:
            return [(-k, vol[-k]) for k in self.keys[:n]]
        return [(k, vol[k]) for k in self.keys[:n]]

    def add_level(self, price: int) -> dict[int, int]:
        q = self.queues.get(price)
        if q is None:
            q = self.queues[price] = {}
            self.volume[price] = 0
            insort(self.keys, self.key(price))
        return q

    def remove_level(self, price: int) -> dict[int, int]:
        q = self.queues.pop(price)
        del self.volume[price]
        k = self.key(price)
        self.keys.pop(bisect_left(self.keys, k))
        return q

    def deeper_than(self, price: int, boundary_key: int) -> bool:
        return self.key(price) > boundary_key


class BookState:
    """L3 book restricted to the first ``levels`` levels of each side."""

    def __init__(self, tick: int = 100, levels: int = 10):
        self.grid = TickGrid(tick)
        self.levels = levels
        self.bids = Side(BID)
        self.asks = Side(ASK)
        self.orders: dict[int, tuple[Side, int]] = {}
        self.flags: set[str] = set()
        self._next_synthetic = -1

    # -- construction -------------------------------------------------
    @classmethod
    def from_snapshot(cls, snap: SnapshotRecord, tick: int = 100, levels: int | None = None) -> "BookState":
        state = cls(tick, snap.levels if levels is None else levels)
        for side, book_side in ((state.asks, snap.asks), (state.bids, snap.bids)):
            for price, size in book_side[: state.levels]:
                state._add_synthetic(side, price, size)
        return state

    def _add_synthetic(self, side: Side, price: int, size: int) -> None:
        oid = self._next_synthetic
        self._next_synthetic -= 1
        side.add_level(price)[oid] = size
        side.volume[price] += size
        self.orders[oid] = (side, price)

    # -- derived views ------------------------------------------------
    @property
    def tick(self) -> int:
        return self.grid.tick

    @property
    def best_bid(self) -> int | None:
        return self.bids.best

    @property
    def best_ask(self) -> int | None:
        return self.asks.best

    @property
    def mid2(self) -> int:
        """Twice the mid-price, an exact integer."""
        if not self.bids.keys or not self.asks.keys:
            raise BookError("mid-price undefined on a one-sided book")
        return self.bids.price_at(0) + self.asks.price_at(0)

    @property
    def mid(self) -> float:
        return self.mid2 / 2

    def l2(self, n: int | None = None) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        n = self.levels if n is None else n
        return self.asks.levels(n), self.bids.levels(n)

    def queue(self, side: int, price: int) -> list[tuple[int, int]]:
        s = self.bids if side == BID else self.asks
        return list(s.queues.get(price, {}).items())

    def tick_volume(self, side: int, price: int) -> int:
        s = self.bids if side == BID else self.asks
        return s.volume.get(price, 0)

    def queue_slots(self, side: int, price: int, depth: int) -> list[int]:
        """First ``depth - 1`` order sizes in time priority plus the aggregated tail."""
        s = self.bids if side == BID else self.asks
        q = s.queues.get(price)
        out = [0] * depth
        if not q:
            return out
        for i, size in enumerate(q.values()):
            if i < depth - 1:
                out[i] = size
            else:
                out[depth - 1] += size
        return out

    def key(self) -> tuple:
        """Canonical, hashable description of the full L3 state."""
        return (
            tuple((p, tuple(q.items())) for p, q in sorted(self.asks.queues.items())),
            tuple((p, tuple(q.items())) for p, q in sorted(self.bids.queues.items())),
        )

    def check_invariants(self) -> None:
        for side in (self.bids, self.asks):
            for price, q in side.queues.items():
                if any(v <= 0 for v in q.values()):
                    raise AssertionError(f"non-positive order size at {price}")
                if sum(q.values()) != side.volume[price]:
                    raise AssertionError(f"queue sum != level volume at {price}")
            if sorted(side.keys) != side.keys or len(set(side.keys)) != len(side.keys):
                raise AssertionError("price levels out of order")
        if self.bids.keys and self.asks.keys and self.best_bid >= self.best_ask:
            raise AssertionError("crossed book")

    # -- event application --------------------------------------------
    def _boundary(self, side: Side) -> int | None:
        keys = side.keys
        return keys[self.levels - 1] if len(keys) >= self.levels else None

    def apply(self, msg: MessageRecord) -> "BookState":
        etype = msg.event_type
        if etype == EXECUTE_HIDDEN:
            return self
        if etype == CROSS or etype == HALT:
            self.flags.add("cross" if etype == CROSS else "halt")
            return self
        side = self.bids if msg.direction == BID else self.asks
        price = msg.price
        if etype == SUBMIT:
            bound = self._boundary(side)
            if bound is not None and side.key(price) > bound:
                return self  # outside the tracked range
            if msg.order_id in self.orders:
                raise BookError(f"duplicate order id {msg.order_id}")
            side.add_level(price)[msg.order_id] = msg.size
            side.volume[price] += msg.size
            self.orders[msg.order_id] = (side, price)
            return self
        if etype not in (CANCEL, DELETE, EXECUTE):
            raise BookError(f"unknown event type {etype}")

        known = self.orders.get(msg.order_id)
        if known is None:
            q = side.queues.get(price)
            if q is None:
                bound = self._boundary(side)
                if bound is not None and side.key(price) > bound:
                    return self
                raise BookError(f"unknown order id {msg.order_id} at untracked price {price}")
            if etype == EXECUTE:
                self._consume_fifo(side, price, None, msg.size)
            else:
                self._consume_synthetic(side, price, msg.size)
            return self

        oside, oprice = known
        q = oside.queues[oprice]
        remaining = q[msg.order_id]
        if etype == EXECUTE:
            self._consume_fifo(oside, oprice, msg.order_id, msg.size)
        elif msg.size > remaining:
            raise BookError(
                f"event {etype} for order {msg.order_id} removes {msg.size} > remaining {remaining}"
            )
        elif etype == DELETE or msg.size == remaining:
            self._remove_order(oside, oprice, msg.order_id, remaining)
        else:
            q[msg.order_id] = remaining - msg.size
            oside.volume[oprice] -= msg.size
        return self

    def _remove_order(self, side: Side, price: int, oid: int, size: int) -> None:
        q = side.queues[price]
        del q[oid]
        del self.orders[oid]
        side.volume[price] -= size
        if not q:
            side.remove_level(price)

    def _consume_fifo(self, side: Side, price: int, first: int | None, size: int) -> None:
        q = side.queues.get(price)
        if q is None or side.volume[price] < size:
            raise BookError(f"execution of {size} exceeds liquidity at {price}")
        order = list(q)
        if first is not None:
            order.remove(first)
            order.insert(0, first)
        left = size
        for oid in order:
            if left == 0:
                break
            have = q[oid]
            take = have if have <= left else left
            left -= take
            if take == have:
                self._remove_order(side, price, oid, have)
            else:
                q[oid] = have - take
                side.volume[price] -= take

    def _consume_synthetic(self, side: Side, price: int, size: int) -> None:
        q = side.queues[price]
        synth = [oid for oid in q if oid < 0]
        if sum(q[o] for o in synth) < size:
            raise BookError(f"cancel of unknown order exceeds aggregated volume at {price}")
        left = size
        for oid in synth:
            have = q[oid]
            take = min(have, left)
            left -= take
            if take == have:
                self._remove_order(side, price, oid, have)
            else:
                q[oid] = have - take
                side.volume[price] -= take
            if left == 0:
                break

    # -- tracked range maintenance ------------------------------------
    def sync(self, snap: SnapshotRecord, prior: tuple[int | None, int | None]) -> None:
        """Trim levels beyond range and re-aggregate prices re-entering it.

        ``prior`` holds the (bid, ask) boundary keys before the event; a price
        missing from the state only counts as re-entering when it lies deeper
        than that boundary, anything else is left for reconciliation to flag.
        """
        L = self.levels
        for side, levels, bound in ((self.bids, snap.bids, prior[0]), (self.asks, snap.asks, prior[1])):
            while len(side.keys) > L:
                price = side.price_at(-1)
                for oid in side.remove_level(price):
                    del self.orders[oid]
            if bound is None or len(side.keys) >= min(len(levels), L):
                continue
            for price, size in levels[:L]:
                if price not in side.queues and side.key(price) > bound:
                    self._add_synthetic(side, price, size)

    def step(self, msg: MessageRecord, snap: SnapshotRecord) -> "BookState":
        prior = (self._boundary(self.bids), self._boundary(self.asks))
        self.apply(msg)
        self.sync(snap, prior)
        return self


def apply_event(state: BookState, msg: MessageRecord) -> BookState:
    """Apply one LOBSTER message in place and return the state."""
    return state.apply(msg)


def iter_replay(
    messages: Sequence[MessageRecord],
    snapshots: Sequence[SnapshotRecord],
    tick: int = 100,
    levels: int | None = None,
) -> Iterator[tuple[int, BookState]]:
    """Yield ``(row, state)`` after every message.

    The book is seeded from the first snapshot (one synthetic order per level)
    so row 0 is yielded without applying message 0.  The same mutable state
    object is yielded each time.
    """
    if not snapshots:
        return
    state = BookState.from_snapshot(snapshots[0], tick, levels)
    yield 0, state
    step = state.step
    for i in range(1, len(messages)):
        step(messages[i], snapshots[i])
        yield i, state


def replay(
    messages: Sequence[MessageRecord],
    snapshots: Sequence[SnapshotRecord],
    tick: int = 100,
    levels: int | None = None,
) -> BookState:
    state = None
    for _, state in iter_replay(messages, snapshots, tick, levels):
        pass
    if state is None:
        raise BookError("cannot replay an empty session")
    return state


def tick_grid(best_bid: int, best_ask: int, window: int, tick: int) -> tuple[np.ndarray, np.ndarray]:
    """Bid and ask tick prices ``pi^(1..W)`` measured outwards from the mid."""
    m2 = best_bid + best_ask
    if m2 % (2 * tick) == 0:
        b1 = a1 = m2 // 2
    else:
        b1 = (m2 - tick) // 2
        a1 = (m2 + tick) // 2
    steps = np.arange(window, dtype=np.int64) * tick
    return b1 - steps, a1 + steps


def relative_tick_grid(state: BookState, window: int) -> tuple[np.ndarray, np.ndarray]:
    if state.best_bid is None or state.best_ask is None:
        raise BookError("relative tick grid needs both sides of the book")
    return tick_grid(state.best_bid, state.best_ask, window, state.tick)


@dataclass
class ReconcileReport:
    matched: bool
    first_mismatch: int | None = None
    diffs: list[tuple[str, int, tuple[int, int] | None, tuple[int, int] | None]] = field(default_factory=list)
    events: int = 0


def _level_diffs(state: BookState, snap: SnapshotRecord, levels: int):
    asks, bids = state.l2(levels)
    diffs = []
    for name, mine, theirs in (("ask", asks, snap.asks[:levels]), ("bid", bids, snap.bids[:levels])):
        if mine == list(theirs):
            continue
        for l in range(max(len(mine), len(theirs))):
            a = mine[l] if l < len(mine) else None
            b = tuple(theirs[l]) if l < len(theirs) else None
            if a != b:
                diffs.append((name, l + 1, a, b))
    return diffs


def reconcile(state: BookState, snap: SnapshotRecord, levels: int = 10, index: int = 0) -> ReconcileReport:
    """Compare the state's L2 view with a snapshot over the first ``levels`` levels."""
    diffs = _level_diffs(state, snap, levels)
    return ReconcileReport(not diffs, None if not diffs else index, diffs, 1)


def replay_reconcile(
    messages: Sequence[MessageRecord],
    snapshots: Sequence[SnapshotRecord],
    tick: int = 100,
    levels: int | None = None,
) -> ReconcileReport:
    """Replay a session and compare against every provided snapshot."""
    if not snapshots:
        return ReconcileReport(True, None, [], 0)
    state = BookState.from_snapshot(snapshots[0], tick, levels)
    lv = state.levels
    step, asks, bids = state.step, state.asks, state.bids
    n = 0
    for i, (msg, snap) in enumerate(zip(messages, snapshots)):
        if i:
            step(msg, snap)
        n += 1
        # cheap equality first; the detailed diff only on mismatch
        if asks.levels(lv) != list(snap.asks[:lv]) or bids.levels(lv) != list(snap.bids[:lv]):
            diffs = _level_diffs(state, snap, lv)
            if diffs:
                return ReconcileReport(False, i, diffs, n)
    return ReconcileReport(True, None, [], n)
