"""Trade fills, per-fill parameter sensitivities and metaorder stitching.

A metaorder is a run of consecutive fills by one agent on one underlying
during one trading day whose sensitivity to the studied smile parameter
keeps one sign. Fills on different strikes and expiries may share a
metaorder.

Bulk work happens on pandas frames (one row per fill); :class:`Metaorder`
objects are cheap views materialised on demand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_parameter, check_positive, check_side
from .calendar import MS_PER_YEAR, VenueCalendar
from .exceptions import DomainError, UndefinedError
from .pricing import OptionSpec, black_vega
from .volsurface import SliceHistory, dsigma_dtheta

FILL_COLUMNS = ["timestamp", "agent_id", "underlying_id", "option_id", "kind", "strike", "expiry",
                "side", "quantity", "price", "aggressive"]
TIME_RESOLUTION_MS = 1


@dataclass(frozen=True)
class TradeFill:
    timestamp: int
    agent_id: str
    underlying_id: str
    option: OptionSpec
    side: int
    quantity: float
    price: float
    aggressive: bool = True
    option_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "side", check_side(self.side))
        check_positive(self.quantity, "quantity")
        check_positive(self.price, "price", strict=False)


def fills_to_frame(fills: Iterable[TradeFill]) -> pd.DataFrame:
    rows = [{
        "timestamp": f.timestamp, "agent_id": f.agent_id, "underlying_id": f.underlying_id,
        "option_id": f.option_id, "kind": "C" if f.option.is_call else "P",
        "strike": f.option.strike, "expiry": f.option.expiry, "side": f.side,
        "quantity": f.quantity, "price": f.price, "aggressive": f.aggressive,
    } for f in fills]
    return normalise_fills(pd.DataFrame(rows, columns=FILL_COLUMNS))


def normalise_fills(frame: pd.DataFrame) -> pd.DataFrame:
    """Typed copy of a fill frame with an ``is_call`` flag and a ``row`` id."""
    df = frame.copy()
    df["timestamp"] = df["timestamp"].astype(np.int64)
    df["expiry"] = df["expiry"].astype(np.int64)
    df["agent_id"] = df["agent_id"].astype(str)
    df["underlying_id"] = df["underlying_id"].astype(str)
    df["option_id"] = df["option_id"].fillna("").astype(str)
    df["side"] = df["side"].astype(np.int64)
    df["quantity"] = df["quantity"].astype(float)
    df["price"] = df["price"].astype(float)
    df["aggressive"] = df["aggressive"].astype(bool)
    df["strike"] = df["strike"].astype(float)
    if "is_call" not in df:
        df["is_call"] = df["kind"].astype(str).str.upper().str[0].eq("C")
    if "row" not in df:
        df["row"] = np.arange(len(df), dtype=np.int64)
    return df


def frame_to_fills(frame: pd.DataFrame) -> list:
    frame = normalise_fills(frame)
    return [TradeFill(int(r.timestamp), r.agent_id, r.underlying_id,
                      OptionSpec(float(r.strike), int(r.expiry), "call" if r.is_call else "put"),
                      int(r.side), float(r.quantity), float(r.price), bool(r.aggressive),
                      r.option_id)
            for r in frame.itertuples(index=False)]


def attach_sensitivities(fills: pd.DataFrame, history: SliceHistory, parameter: str,
                         calendar: VenueCalendar = VenueCalendar()):
    """Price every fill against the latest slice of its expiry at or before the fill.

    Returns ``(priced, quarantined)``. ``priced`` gains the columns
    ``day, forward, k, vol, vega, S``; ``quarantined`` holds the fills
    that could not be priced with a ``reason`` column.
    """
    check_parameter(parameter)
    df = normalise_fills(fills)
    df["day"] = calendar.day_of(df["timestamp"].to_numpy())
    rows = history.lookup(df["underlying_id"].to_numpy(), df["expiry"].to_numpy(),
                          df["timestamp"].to_numpy())
    F = history.column("forward", rows)
    D = history.column("discount", rows)
    tau = (df["expiry"].to_numpy() - df["timestamp"].to_numpy()) / MS_PER_YEAR
    K = df["strike"].to_numpy()
    reason = np.full(len(df), "", dtype=object)
    reason[rows < 0] = "no_slice"
    reason[tau <= 0] = "expired"
    ok = reason == ""
    k = np.full(len(df), np.nan)
    vol = np.full(len(df), np.nan)
    v = np.full(len(df), np.nan)
    if ok.any():
        k[ok] = np.log(K[ok] / F[ok])
        vol[ok] = (history.column("atmf_vol", rows[ok]) + history.column("atmf_skew", rows[ok]) * k[ok]
                   + history.column("curvature", rows[ok]) * k[ok] ** 2)
        v[ok] = black_vega(F[ok], K[ok], tau[ok], np.maximum(vol[ok], 0.0), D[ok])
    bad_vol = ok & ~(vol > 0)
    reason[bad_vol] = "nonpositive_vol"
    ok &= ~bad_vol
    df["forward"], df["k"], df["vol"], df["vega"] = F, k, vol, v
    df["S"] = df["side"].to_numpy() * df["quantity"].to_numpy() * v * dsigma_dtheta(k, parameter)
    df["reason"] = reason
    priced = df[ok].drop(columns="reason").reset_index(drop=True)
    quarantined = df[~ok].reset_index(drop=True)
    return priced, quarantined


@dataclass
class Metaorder:
    id: str
    agent_id: str
    underlying_id: str
    day: int
    parameter: str
    times: np.ndarray
    sensitivities: np.ndarray
    strikes: np.ndarray
    forwards: np.ndarray
    quantities: np.ndarray
    prices: np.ndarray
    sides: np.ndarray
    expiries: np.ndarray
    is_call: np.ndarray
    sign: int = 1

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def t0(self) -> int:
        return int(self.times[0])

    @property
    def t_end(self) -> int:
        return int(self.times[-1])

    @property
    def duration_ms(self) -> int:
        return max(self.t_end - self.t0, TIME_RESOLUTION_MS)

    @property
    def duration(self) -> float:
        """T in seconds; one timestamp unit when all fills share a millisecond."""
        return self.duration_ms / 1000.0

    @property
    def V(self) -> float:
        return float(np.sum(self.sensitivities))

    @property
    def moneyness(self) -> np.ndarray:
        return self.strikes / self.forwards

    def fills(self) -> list:
        return [TradeFill(int(t), self.agent_id, self.underlying_id,
                          OptionSpec(float(K), int(e), "call" if c else "put"), int(s), float(q),
                          float(p))
                for t, K, e, c, s, q, p in zip(self.times, self.strikes, self.expiries,
                                               self.is_call, self.sides, self.quantities,
                                               self.prices)]


def _fill_sign(S: np.ndarray, group_start: np.ndarray) -> np.ndarray:
    """Sign of each fill with zeros taking the sign of the run they sit in.

    Zeros inherit the previous nonzero sign within the group, leading
    zeros the next one, and all-zero groups count as +1.
    """
    sgn = pd.Series(np.sign(S)).replace(0.0, np.nan)
    grp = np.cumsum(group_start)
    sgn = sgn.groupby(grp).ffill()
    sgn = sgn.groupby(grp).bfill()
    return sgn.fillna(1.0).to_numpy().astype(np.int64)


def stitch_frame(priced: pd.DataFrame, parameter: str, max_gap_s: Optional[float] = None,
                 calendar: VenueCalendar = VenueCalendar()):
    """Vectorised stitcher over a priced fill frame.

    Returns ``(fills, summary)``: fills sorted metaorder by metaorder with a
    ``metaorder_id`` column, and one summary row per metaorder.
    """
    check_parameter(parameter)
    df = priced
    if "day" not in df:
        df = df.assign(day=calendar.day_of(df["timestamp"].to_numpy()))
    df = df.sort_values(["agent_id", "underlying_id", "day", "timestamp", "row"],
                        kind="stable").reset_index(drop=True)
    n = len(df)
    if n == 0:
        return df.assign(metaorder_id=pd.Series(dtype=str)), _empty_summary()
    a = df["agent_id"].to_numpy()
    u = df["underlying_id"].to_numpy()
    d = df["day"].to_numpy()
    t = df["timestamp"].to_numpy()
    S = df["S"].to_numpy(float)
    start = np.ones(n, bool)
    start[1:] = (a[1:] != a[:-1]) | (u[1:] != u[:-1]) | (d[1:] != d[:-1])
    sgn = _fill_sign(S, start)
    new = start.copy()
    new[1:] |= sgn[1:] != sgn[:-1]
    if max_gap_s is not None:
        new[1:] |= (t[1:] - t[:-1]) > float(max_gap_s) * 1000.0
    run = np.cumsum(new) - 1
    first = np.flatnonzero(new)
    group_of_run = np.cumsum(start)[first] - 1
    seq = pd.Series(group_of_run).groupby(group_of_run).cumcount().to_numpy()
    labels = pd.Series(d[first]).map(VenueCalendar.day_label).to_numpy()
    ids = [f"{uu}/{aa}/{lab}/{s:04d}" for uu, aa, lab, s in zip(u[first], a[first], labels, seq)]
    df["metaorder_id"] = np.asarray(ids, dtype=object)[run]
    df["sign"] = sgn
    summary = summarise(df, first, parameter)
    return df, summary


SUMMARY_COLUMNS = ["metaorder_id", "agent_id", "underlying_id", "day", "parameter", "t0", "t_end",
                   "duration_ms", "duration_s", "n", "V", "abs_V", "sign", "dispersion", "start",
                   "stop"]


def _empty_summary() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object) for c in SUMMARY_COLUMNS})


def weighted_dispersion(x, w, first):
    """Weighted unbiased std of ``x`` per run starting at positions ``first``."""
    x = np.asarray(x, float)
    w = np.abs(np.asarray(w, float))
    sw = np.add.reduceat(w, first)
    sw2 = np.add.reduceat(w * w, first)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.add.reduceat(w * x, first) / sw
        counts = np.diff(np.r_[first, len(x)])
        dev = x - np.repeat(mean, counts)
        num = np.add.reduceat(w * dev * dev, first)
        den = sw - sw2 / sw
        var = np.where(num == 0, 0.0, num / den)
    var = np.where((sw > 0) & (den > 0), var, np.where((sw > 0) & (num == 0), 0.0, np.nan))
    return np.sqrt(np.maximum(var, 0.0))


def summarise(fills: pd.DataFrame, first: np.ndarray, parameter: str) -> pd.DataFrame:
    n_all = len(fills)
    stop = np.r_[first[1:], n_all]
    t = fills["timestamp"].to_numpy()
    S = fills["S"].to_numpy(float)
    V = np.add.reduceat(S, first)
    t0 = t[first]
    t_end = t[stop - 1]
    dur = np.maximum(t_end - t0, TIME_RESOLUTION_MS)
    disp = weighted_dispersion(fills["strike"].to_numpy() / fills["forward"].to_numpy(), S, first)
    return pd.DataFrame({
        "metaorder_id": fills["metaorder_id"].to_numpy()[first],
        "agent_id": fills["agent_id"].to_numpy()[first],
        "underlying_id": fills["underlying_id"].to_numpy()[first],
        "day": fills["day"].to_numpy()[first],
        "parameter": parameter,
        "t0": t0, "t_end": t_end, "duration_ms": dur, "duration_s": dur / 1000.0,
        "n": stop - first, "V": V, "abs_V": np.abs(V),
        "sign": fills["sign"].to_numpy()[first], "dispersion": disp,
        "start": first, "stop": stop,
    })


class MetaorderSet:
    """Stitched metaorders: fills grouped contiguously plus one summary row each."""

    def __init__(self, fills: pd.DataFrame, summary: pd.DataFrame, parameter: str):
        self.fills = fills
        self.summary = summary.reset_index(drop=True)
        self.parameter = parameter

    def __len__(self):
        return len(self.summary)

    @property
    def ids(self):
        return self.summary["metaorder_id"].to_numpy()

    def subset(self, mask) -> "MetaorderSet":
        mask = np.asarray(mask, bool)
        summ = self.summary
        keep_fill = np.repeat(mask, summ["n"].to_numpy().astype(np.int64))
        fills = self.fills[keep_fill].reset_index(drop=True)
        kept = summ[mask].copy()
        n = kept["n"].to_numpy().astype(np.int64)
        kept["start"] = np.r_[0, np.cumsum(n)[:-1]] if len(n) else n
        kept["stop"] = kept["start"] + n
        return MetaorderSet(fills, kept, self.parameter)

    def filter_min_length(self, n_star: int) -> "MetaorderSet":
        return self.subset(self.summary["n"].to_numpy() >= _check_n_star(n_star))

    def fill_metaorder_index(self) -> np.ndarray:
        """Position in :attr:`summary` of the metaorder owning each fill."""
        return np.repeat(np.arange(len(self.summary)), self.summary["n"].to_numpy().astype(np.int64))

    def get(self, i: int) -> Metaorder:
        row = self.summary.iloc[i]
        f = self.fills.iloc[int(row["start"]):int(row["stop"])]
        return Metaorder(
            id=row["metaorder_id"], agent_id=row["agent_id"], underlying_id=row["underlying_id"],
            day=int(row["day"]), parameter=self.parameter,
            times=f["timestamp"].to_numpy(), sensitivities=f["S"].to_numpy(float),
            strikes=f["strike"].to_numpy(float), forwards=f["forward"].to_numpy(float),
            quantities=f["quantity"].to_numpy(float), prices=f["price"].to_numpy(float),
            sides=f["side"].to_numpy(), expiries=f["expiry"].to_numpy(),
            is_call=f["is_call"].to_numpy(), sign=int(row["sign"]))

    def __iter__(self):
        return (self.get(i) for i in range(len(self)))

    def to_list(self) -> list:
        return list(self)

    @classmethod
    def from_metaorders(cls, metaorders: Sequence[Metaorder]) -> "MetaorderSet":
        if isinstance(metaorders, MetaorderSet):
            return metaorders
        metaorders = list(metaorders)
        if not metaorders:
            return cls(pd.DataFrame(columns=["timestamp", "S"]), _empty_summary(), "atmf_vol")
        parts = []
        for m in metaorders:
            parts.append(pd.DataFrame({
                "timestamp": m.times, "S": m.sensitivities, "strike": m.strikes,
                "forward": m.forwards, "quantity": m.quantities, "price": m.prices,
                "side": m.sides, "expiry": m.expiries, "is_call": m.is_call,
                "agent_id": m.agent_id, "underlying_id": m.underlying_id, "day": m.day,
                "metaorder_id": m.id, "sign": m.sign}))
        fills = pd.concat(parts, ignore_index=True)
        first = np.r_[0, np.cumsum([m.n for m in metaorders])[:-1]]
        return cls(fills, summarise(fills, first, metaorders[0].parameter), metaorders[0].parameter)


def _check_n_star(n_star) -> int:
    if int(n_star) != n_star or n_star < 1:
        raise DomainError(f"n_star must be an integer >= 1, got {n_star!r}")
    return int(n_star)


class MetaorderStitcher(TransformerMixin, BaseEstimator):
    """Groups fills into metaorders on sign flips of their sensitivity.

    ``fit`` takes a fill frame; if it lacks an ``S`` column a
    :class:`SliceHistory` must be passed to price the fills. Fills that
    cannot be priced end up in ``quarantined_``. ``transform`` returns
    the priced fills labelled with their ``metaorder_id``.
    """

    def __init__(self, parameter: str = "atmf_vol", max_gap_s: Optional[float] = None,
                 calendar: Optional[VenueCalendar] = None):
        self.parameter = parameter
        self.max_gap_s = max_gap_s
        self.calendar = calendar

    def fit(self, X, y=None, history: Optional[SliceHistory] = None):
        check_parameter(self.parameter)
        cal = self.calendar or VenueCalendar()
        if "S" in X:
            priced = normalise_fills(X)
            if "day" not in priced:
                priced["day"] = cal.day_of(priced["timestamp"].to_numpy())
            quarantined = priced.iloc[:0].assign(reason=pd.Series(dtype=object))
        elif history is None:
            raise DomainError("fills carry no sensitivities and no slice history was given")
        else:
            priced, quarantined = attach_sensitivities(X, history, self.parameter, cal)
        fills, summary = stitch_frame(priced, self.parameter, self.max_gap_s, cal)
        self.metaorders_ = MetaorderSet(fills, summary, self.parameter)
        self.quarantined_ = quarantined
        self.n_fills_in_ = len(X)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "metaorders_")
        return self.metaorders_.fills


def stitch_metaorders(fills, history: SliceHistory, parameter: str,
                      calendar: VenueCalendar = VenueCalendar(), max_gap_s=None) -> list:
    """List-returning convenience wrapper around :class:`MetaorderStitcher`."""
    frame = fills if isinstance(fills, pd.DataFrame) else fills_to_frame(fills)
    st = MetaorderStitcher(parameter, max_gap_s, calendar).fit(frame, history=history)
    return st.metaorders_.to_list()


def filter_min_length(metaorders, n_star: int):
    if isinstance(metaorders, MetaorderSet):
        return metaorders.filter_min_length(n_star)
    n_star = _check_n_star(n_star)
    return [m for m in metaorders if m.n >= n_star]


def daily_market_sensitivity(sensitivities) -> float:
    """Sum of absolute per-fill sensitivities; no netting across sides."""
    s = np.asarray(sensitivities, dtype=float)
    if s.size == 0:
        warnings.warn("no fills on this day; market sensitivity is zero", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return float(np.sum(np.abs(s)))


def market_sensitivity_by_day(priced: pd.DataFrame) -> pd.Series:
    """Daily market sensitivity keyed by (underlying_id, day)."""
    return (priced["S"].abs().groupby([priced["underlying_id"], priced["day"]], observed=True)
            .sum().rename("market_V"))


def participation_rate(m: Metaorder, market_V: float) -> float:
    if not market_V > 0:
        raise UndefinedError("market sensitivity is zero; participation rate undefined")
    return abs(m.V) / float(market_V)


def strike_dispersion(m: Metaorder) -> float:
    x = m.moneyness
    w = np.abs(m.sensitivities)
    sw = w.sum()
    if sw <= 0:
        raise UndefinedError("metaorder carries zero total sensitivity")
    if np.all(x == x[0]):
        return 0.0
    den = sw - np.sum(w * w) / sw
    if den <= 0:
        raise UndefinedError("fewer than two fills carry weight")
    mean = np.sum(w * x) / sw
    return float(np.sqrt(np.sum(w * (x - mean) ** 2) / den))


def sensitivity_time(m: Metaorder, t) -> float:
    t = int(t)
    T = m.duration_ms
    if t < m.t0 or t > m.t_end + T:
        raise DomainError(f"time {t} outside the metaorder window [{m.t0}, {m.t_end + T}]")
    if t > m.t_end:
        return 1.0 + (t - m.t_end) / T
    V = m.V
    if V == 0:
        raise UndefinedError("metaorder carries zero total sensitivity")
    done = np.searchsorted(m.times, t, side="right")
    return float(np.sum(m.sensitivities[:done]) / V)
