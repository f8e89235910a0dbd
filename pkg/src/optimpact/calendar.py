"""Timestamps and the venue trading calendar.

All timestamps are int64 milliseconds since the Unix epoch, UTC. The
calendar maps a timestamp to its exchange trading day and gives the
session bounds of a day.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DomainError

MS_PER_SECOND = 1000
MS_PER_MINUTE = 60_000
MS_PER_DAY = 86_400_000
MS_PER_YEAR = 365 * MS_PER_DAY  # ACT/365


def to_ms(value) -> int:
    """Convert an ISO-8601 string, datetime or number to epoch milliseconds."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, str):
        try:
            ts = pd.Timestamp(value)
        except ValueError as exc:
            raise DomainError(f"unparseable timestamp {value!r}") from exc
    else:
        ts = pd.Timestamp(value)
    if ts is pd.NaT:
        raise DomainError(f"unparseable timestamp {value!r}")
    if ts.tzinfo is None:
        ts = ts.tz_localize("UTC")
    return int(ts.value // 1_000_000)


def ms_to_iso(ms) -> str:
    ms = int(ms)
    secs, rem = divmod(ms, 1000)
    stamp = dt.datetime.fromtimestamp(secs, tz=dt.timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%S") + f".{rem:03d}Z"


def year_fraction(t_from, t_to):
    """ACT/365 year fraction between two millisecond timestamps (vectorised)."""
    return (np.asarray(t_to, dtype=np.int64) - np.asarray(t_from, dtype=np.int64)) / MS_PER_YEAR


def _parse_hhmm(text: str) -> int:
    try:
        hh, mm = text.strip().split(":")
        minutes = int(hh) * 60 + int(mm)
    except ValueError:
        raise ConfigError(f"session time must look like HH:MM, got {text!r}") from None
    if not 0 <= minutes <= 24 * 60:
        raise ConfigError(f"session time out of range: {text!r}")
    return minutes


@dataclass(frozen=True)
class VenueCalendar:
    """Single-session venue calendar.

    ``session_open``/``session_close`` are local wall-clock times and
    ``utc_offset_minutes`` converts them to UTC. The default is one
    continuous session covering the whole UTC day.
    """

    utc_offset_minutes: int = 0
    session_open: str = "00:00"
    session_close: str = "24:00"

    def __post_init__(self):
        if _parse_hhmm(self.session_close) <= _parse_hhmm(self.session_open):
            raise ConfigError("session_close must be after session_open")

    @property
    def offset_ms(self) -> int:
        return int(self.utc_offset_minutes) * MS_PER_MINUTE

    def day_of(self, t_ms):
        """Trading-day index (days since epoch, local) of each timestamp."""
        t = np.asarray(t_ms, dtype=np.int64)
        return (t + self.offset_ms) // MS_PER_DAY

    def session_bounds(self, day):
        """UTC (open, close) milliseconds of a day index; vectorised."""
        day = np.asarray(day, dtype=np.int64)
        start = day * MS_PER_DAY - self.offset_ms
        return (start + _parse_hhmm(self.session_open) * MS_PER_MINUTE,
                start + _parse_hhmm(self.session_close) * MS_PER_MINUTE)

    def session_length_ms(self) -> int:
        return (_parse_hhmm(self.session_close) - _parse_hhmm(self.session_open)) * MS_PER_MINUTE

    @staticmethod
    def day_label(day) -> str:
        return (dt.date(1970, 1, 1) + dt.timedelta(days=int(day))).isoformat()

    @staticmethod
    def day_from_label(label: str) -> int:
        return (dt.date.fromisoformat(label) - dt.date(1970, 1, 1)).days
