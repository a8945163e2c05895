"""Rolling, non-overlapping five-week windows over a trading calendar."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEEKS_PER_WINDOW = 5
TRAIN_WEEKS = 4


class CalendarError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    index: int
    train_days: tuple[str, ...]
    val_days: tuple[str, ...]
    test_days: tuple[str, ...]

    @property
    def train_val_days(self) -> tuple[str, ...]:
        return tuple(sorted(self.train_days + self.val_days))


def business_days(start: str, n: int) -> list[str]:
    """``n`` consecutive weekdays from ``start`` (ISO dates), holidays ignored."""
    d = dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += dt.timedelta(days=1)
    return out


def trading_weeks(dates: Sequence[str]) -> list[list[str]]:
    """Group sorted ISO dates by ISO calendar week."""
    weeks: list[list[str]] = []
    key = None
    for s in sorted(dates):
        k = dt.date.fromisoformat(s).isocalendar()[:2]
        if k != key:
            weeks.append([])
            key = k
        weeks[-1].append(s)
    return weeks


def build_windows(calendar: Sequence[str] | Sequence[Sequence[str]], seed: int = 0, warmup_weeks: int = 0,
                  val_days: int = 5) -> list[Window]:
    """Split a calendar into ``floor(weeks / 5)`` windows.

    ``calendar`` is either a list of ISO dates (grouped into calendar weeks)
    or an explicit list of weeks.  The first ``warmup_weeks`` are skipped
    (they only feed rolling normalisation).  Each window has four train-val
    weeks, from which ``val_days`` seeded random days are held out for
    validation, followed by one test week.
    """
    if len(calendar) and isinstance(calendar[0], str):
        weeks = trading_weeks(calendar)  # type: ignore[arg-type]
    else:
        weeks = [list(w) for w in calendar]
    weeks = weeks[warmup_weeks:]
    n = len(weeks) // WEEKS_PER_WINDOW
    if n < 1:
        raise CalendarError(f"need at least {WEEKS_PER_WINDOW} weeks after warm-up, got {len(weeks)}")
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for w in range(n):
        block = weeks[w * WEEKS_PER_WINDOW : (w + 1) * WEEKS_PER_WINDOW]
        tv = [d for week in block[:TRAIN_WEEKS] for d in week]
        if len(tv) <= val_days:
            raise CalendarError(f"window {w}: {len(tv)} train-val days cannot hold {val_days} validation days")
        rng = np.random.default_rng(children[w])
        pick = set(rng.choice(len(tv), size=val_days, replace=False).tolist())
        out.append(
            Window(
                w,
                tuple(d for i, d in enumerate(tv) if i not in pick),
                tuple(d for i, d in enumerate(tv) if i in pick),
                tuple(block[TRAIN_WEEKS]),
            )
        )
    return out
