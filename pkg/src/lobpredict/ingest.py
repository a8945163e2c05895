"""Parsing and cleaning of LOBSTER message / order book files.

LOBSTER ships one message file and one order book file per ticker and day.
Row ``i`` of the order book file is the state of the first ``L`` levels after
message ``i`` has been applied.  Prices are integers in units of 1e-4 dollars
and are never converted to floats here.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

ASK_SENTINEL = 9_999_999_999
BID_SENTINEL = -9_999_999_999

SUBMIT = 1
CANCEL = 2
DELETE = 3
EXECUTE = 4
EXECUTE_HIDDEN = 5
CROSS = 6
HALT = 7

MARKET_OPEN = 34_200.0  # 09:30
MARKET_CLOSE = 57_600.0  # 16:00
EDGE_SECONDS = 600.0

_NS = 1_000_000_000


class ParseError(ValueError):
    """Malformed LOBSTER input; ``line`` is 1-based."""

    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class CleaningError(ValueError):
    pass


def _parse_time_ns(text: str) -> int:
    sec, _, frac = text.strip().partition(".")
    frac = (frac + "000000000")[:9]
    return int(sec) * _NS + int(frac)


@dataclass(frozen=True, slots=True)
class MessageRecord:
    time_ns: int
    event_type: int
    order_id: int
    size: int
    price: int
    direction: int

    @property
    def time(self) -> float:
        """Seconds after midnight (float view of ``time_ns``)."""
        return self.time_ns / _NS

    def to_row(self) -> str:
        sec, ns = divmod(self.time_ns, _NS)
        return (
            f"{sec}.{ns:09d},{self.event_type},{self.order_id},"
            f"{self.size},{self.price},{self.direction}"
        )


@dataclass(frozen=True, slots=True)
class SnapshotRecord:
    """First ``levels`` levels of both sides; absent levels are omitted.

    ``asks`` and ``bids`` hold ``(price, size)`` pairs ordered from the best
    level outwards.
    """

    levels: int
    asks: tuple[tuple[int, int], ...]
    bids: tuple[tuple[int, int], ...]

    @property
    def best_ask(self) -> int | None:
        return self.asks[0][0] if self.asks else None

    @property
    def best_bid(self) -> int | None:
        return self.bids[0][0] if self.bids else None

    def ask_price(self, level: int) -> int | None:
        return self.asks[level - 1][0] if level <= len(self.asks) else None

    def bid_price(self, level: int) -> int | None:
        return self.bids[level - 1][0] if level <= len(self.bids) else None

    def ask_size(self, level: int) -> int:
        return self.asks[level - 1][1] if level <= len(self.asks) else 0

    def bid_size(self, level: int) -> int:
        return self.bids[level - 1][1] if level <= len(self.bids) else 0

    @property
    def crossed(self) -> bool:
        if not self.asks or not self.bids:
            return False
        return self.bids[0][0] >= self.asks[0][0]

    @property
    def two_sided(self) -> bool:
        return bool(self.asks) and bool(self.bids)

    def to_row(self) -> str:
        out = []
        for l in range(self.levels):
            if l < len(self.asks):
                out.extend(self.asks[l])
            else:
                out.extend((ASK_SENTINEL, 0))
            if l < len(self.bids):
                out.extend(self.bids[l])
            else:
                out.extend((BID_SENTINEL, 0))
        return ",".join(map(str, out))


def snapshot_from_row(values: Sequence[int], levels: int) -> SnapshotRecord:
    asks = []
    bids = []
    for l in range(levels):
        pa, va, pb, vb = values[4 * l : 4 * l + 4]
        # LOBSTER pads missing depth with +/-9999999999 and size 0
        if abs(pa) != ASK_SENTINEL and va > 0:
            asks.append((pa, va))
        if abs(pb) != ASK_SENTINEL and vb > 0:
            bids.append((pb, vb))
    return SnapshotRecord(levels, tuple(asks), tuple(bids))


def parse_messages(path: str | os.PathLike) -> list[MessageRecord]:
    path = os.fspath(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 6:
                raise ParseError(path, lineno, f"expected 6 columns, got {len(parts)}")
            try:
                rec = MessageRecord(
                    _parse_time_ns(parts[0]),
                    int(parts[1]),
                    int(parts[2]),
                    int(parts[3]),
                    int(parts[4]),
                    int(parts[5]),
                )
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not 1 <= rec.event_type <= 7:
                raise ParseError(path, lineno, f"event type {rec.event_type} not in 1..7")
            if rec.size < 0:
                raise ParseError(path, lineno, "negative size")
            if rec.direction not in (1, -1):
                raise ParseError(path, lineno, f"direction {rec.direction} not in {{-1, 1}}")
            out.append(rec)
    return out


def parse_snapshots(path: str | os.PathLike, levels: int) -> list[SnapshotRecord]:
    path = os.fspath(path)
    out = []
    width = 4 * levels
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise ParseError(path, lineno, f"expected {width} columns, got {len(parts)}")
            try:
                values = [int(p) for p in parts]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            out.append(snapshot_from_row(values, levels))
    return out


def parse_session(
    message_path: str | os.PathLike, snapshot_path: str | os.PathLike, levels: int = 10
) -> tuple[list[MessageRecord], list[SnapshotRecord]]:
    """Read a LOBSTER message/order book file pair, rows kept in file order."""
    messages = parse_messages(message_path)
    snapshots = parse_snapshots(snapshot_path, levels)
    if len(messages) != len(snapshots):
        raise ParseError(
            os.fspath(snapshot_path),
            min(len(messages), len(snapshots)) + 1,
            f"row count mismatch: {len(messages)} messages vs {len(snapshots)} snapshots",
        )
    return messages, snapshots


def write_session(
    messages: Iterable[MessageRecord],
    snapshots: Iterable[SnapshotRecord],
    message_path: str | os.PathLike,
    snapshot_path: str | os.PathLike,
) -> None:
    with open(message_path, "w") as fh:
        fh.writelines(m.to_row() + "\n" for m in messages)
    with open(snapshot_path, "w") as fh:
        fh.writelines(s.to_row() + "\n" for s in snapshots)


@dataclass(frozen=True)
class ExclusionRange:
    """A configured time range to drop, e.g. around a trading halt."""

    ticker: str
    date: str
    start: float
    end: float


def exclusions_for(
    ranges: Iterable[ExclusionRange], ticker: str, date: str
) -> list[tuple[float, float]]:
    return [(r.start, r.end) for r in ranges if r.ticker == ticker and r.date == date]


# known halt in the NASDAQ sample, kept as a ready-made entry
WBA_HALT_2019_11_05 = ExclusionRange("WBA", "2019-11-05", 48770.233001415, 49070.2335639)


@dataclass(frozen=True, slots=True)
class CleanEntry:
    clock: int
    row: int  # index of the last raw row of the collapsed group
    messages: tuple[MessageRecord, ...]
    snapshot: SnapshotRecord

    @property
    def time_ns(self) -> int:
        return self.messages[-1].time_ns


@dataclass
class CleanSession:
    date: str
    entries: list[CleanEntry]
    excluded: list[tuple[float, float]]
    messages: list[MessageRecord] = field(repr=False, default_factory=list)
    snapshots: list[SnapshotRecord] = field(repr=False, default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rows(self) -> list[int]:
        return [e.row for e in self.entries]


def halt_ranges(messages: Sequence[MessageRecord], close: float = MARKET_CLOSE) -> list[tuple[float, float]]:
    """Ranges opened by type-7 halt messages (price -1) and closed by resumes (price 1)."""
    out = []
    start = None
    for m in messages:
        if m.event_type != HALT:
            continue
        if m.price == -1 and start is None:
            start = m.time
        elif m.price == 1 and start is not None:
            out.append((start, m.time))
            start = None
    if start is not None:
        out.append((start, close))
    return out


def clean_session(
    messages: Sequence[MessageRecord],
    snapshots: Sequence[SnapshotRecord],
    session_times: tuple[float, float] = (MARKET_OPEN, MARKET_CLOSE),
    exclusions: Iterable[tuple[float, float]] = (),
    date: str = "",
    edge_seconds: float = EDGE_SECONDS,
) -> CleanSession:
    """Apply the cleaning pipeline and index the result on the order book clock.

    Crossed (and one-sided) states are removed, equal-timestamp runs collapse
    onto their last state, the first and last ``edge_seconds`` of the session
    are dropped together with any excluded ranges (configured or opened by
    halt messages).
    """
    if len(messages) != len(snapshots):
        raise CleaningError("messages and snapshots are not aligned row for row")
    prev = None
    for i, m in enumerate(messages):
        if prev is not None and m.time_ns < prev:
            raise CleaningError(f"timestamps decrease at row {i}")
        prev = m.time_ns

    excluded = list(exclusions) + halt_ranges(messages, session_times[1])
    lo = session_times[0] + edge_seconds
    hi = session_times[1] - edge_seconds
    lo_ns, hi_ns = round(lo * _NS), round(hi * _NS)
    excluded_ns = [(round(a * _NS), round(b * _NS)) for a, b in excluded]

    # crossed / one-sided states first, then collapse equal timestamps
    kept = [i for i, s in enumerate(snapshots) if s.two_sided and not s.crossed]
    groups: list[tuple[int, int]] = []  # (first raw row of run, last kept row)
    n = len(messages)
    for i in kept:
        t = messages[i].time_ns
        last_same = groups and messages[groups[-1][1]].time_ns == t
        if last_same:
            groups[-1] = (groups[-1][0], i)
        else:
            groups.append((i, i))

    entries = []
    for first, last in groups:
        t = messages[last].time_ns
        if t < lo_ns or t > hi_ns:
            continue
        if any(a <= t <= b for a, b in excluded_ns):
            continue
        # all raw messages sharing the timestamp belong to the collapsed event
        j = first
        while j > 0 and messages[j - 1].time_ns == t:
            j -= 1
        k = last
        while k + 1 < n and messages[k + 1].time_ns == t:
            k += 1
        entries.append(
            CleanEntry(len(entries), last, tuple(messages[j : k + 1]), snapshots[last])
        )

    session = CleanSession(date, entries, excluded, list(messages), list(snapshots))
    if not entries:
        session.flags.append("empty-session")
        logger.warning("session %s: every row was filtered out", date or "<unnamed>")
    return session


def recollapse(session: CleanSession) -> CleanSession:
    """Run the cleaning rules again on an already clean session's retained stream."""
    msgs = [e.messages[-1] for e in session.entries]
    snaps = [e.snapshot for e in session.entries]
    return clean_session(msgs, snaps, (-1e9, 1e9), session.excluded, session.date, 0.0)
