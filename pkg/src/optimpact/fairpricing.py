"""Fair-pricing diagnostics.

The sensitivity-weighted average parameter (S-WAP) is the options
analogue of VWAP. Fair pricing holds when the S-WAP move over a
metaorder equals the parameter move once relaxation has finished
(``t0 + 2T``). The portfolio variant compares executed value with
model revaluations of the same positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import paired_arrays
from .calendar import MS_PER_YEAR, VenueCalendar
from .exceptions import DomainError, UndefinedError
from .impact import _values_at, bucket_stats, reference_values
from .metaorder import Metaorder, MetaorderSet
from .pricing import black_price
from .volsurface import ParamSeries, SliceHistory, SmileSlice, smile_vol

SELL_CONVENTION = "sell metaorders reported with x and y negated"


@dataclass(frozen=True)
class FairPricingPoint:
    metaorder_id: str
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DomainError("fair-pricing coordinates must be finite")


def swap_param(m: Metaorder, series: ParamSeries) -> float:
    """Sensitivity-weighted average of theta at the fill times."""
    V = m.V
    if V == 0:
        raise UndefinedError("metaorder has zero total sensitivity")
    theta = series.values_at(m.times)
    return float(np.sum(m.sensitivities * theta) / V)


def origin_slope(x, y) -> float:
    """Least-squares slope of a line through the origin."""
    x, y = paired_arrays(x, y)
    den = float(np.dot(x, x))
    if den == 0:
        raise UndefinedError("all x values are zero")
    return float(np.dot(x, y) / den)


@dataclass
class FairPricingResult:
    points: pd.DataFrame
    slope: float
    raw_slope: float
    buckets: pd.DataFrame = field(repr=False, default=None)
    n_excluded: int = 0
    convention: str = ""

    def as_points(self) -> list:
        return [FairPricingPoint(i, float(a), float(b))
                for i, a, b in zip(self.points["metaorder_id"], self.points["x"], self.points["y"])]


def _complete_windows(summary: pd.DataFrame, calendar: VenueCalendar) -> np.ndarray:
    """Metaorders whose 2T window closes before the session does."""
    close = calendar.session_bounds(summary["day"].to_numpy().astype(np.int64))[1]
    end = summary["t_end"].to_numpy().astype(np.int64) + summary["duration_ms"].to_numpy().astype(np.int64)
    return end <= close


def _fit(points: pd.DataFrame, n_buckets: int, n_excluded: int, convention: str = ""):
    if len(points) == 0:
        return FairPricingResult(points, np.nan, np.nan, None, n_excluded, convention)
    nb = min(n_buckets, len(points))
    b = bucket_stats(points["x"], points["y"], nb)
    try:
        slope = origin_slope(b["x"], b["y"])
        raw = origin_slope(points["x"], points["y"])
    except UndefinedError:
        slope = raw = np.nan
    return FairPricingResult(points, slope, raw, b, n_excluded, convention)


def fair_pricing_points(metaorders, series, calendar: VenueCalendar = VenueCalendar(),
                        n_buckets: int = 20, pre_trade: bool = True) -> FairPricingResult:
    """(S-WAP move, post-relaxation move) per metaorder plus the diagonal slope."""
    ms = MetaorderSet.from_metaorders(metaorders)
    summ = ms.summary
    if len(summ) == 0:
        return _fit(pd.DataFrame(columns=["metaorder_id", "x", "y"]), n_buckets, 0)
    complete = _complete_windows(summ, calendar) & (summ["V"].to_numpy(float) != 0)
    ref = reference_values(ms, series, pre_trade)
    fills = ms.fills
    owner = ms.fill_metaorder_index()
    theta = _values_at(series, summ["underlying_id"].to_numpy()[owner],
                       fills["timestamp"].to_numpy().astype(np.int64))
    weighted = np.bincount(owner, weights=fills["S"].to_numpy(float) * theta, minlength=len(summ))
    with np.errstate(invalid="ignore", divide="ignore"):
        swap = weighted / summ["V"].to_numpy(float)
    t2 = summ["t_end"].to_numpy().astype(np.int64) + summ["duration_ms"].to_numpy().astype(np.int64)
    theta_end = _values_at(series, summ["underlying_id"].to_numpy(), t2)
    x, y = swap - ref, theta_end - ref
    ok = complete & np.isfinite(x) & np.isfinite(y)
    pts = pd.DataFrame({"metaorder_id": summ["metaorder_id"].to_numpy()[ok], "x": x[ok], "y": y[ok]})
    return _fit(pts, n_buckets, int((~ok).sum()))


def portfolio_value_at_fills(m: Metaorder) -> float:
    return float(np.sum(m.quantities * m.prices))


def _reprice(m: Metaorder, sl: SmileSlice) -> float:
    tau = (m.expiries - sl.snapshot_time) / MS_PER_YEAR
    if np.any(tau <= 0):
        raise DomainError("option expired before the revaluation time")
    vol = smile_vol(sl, m.strikes)
    return float(np.sum(m.quantities * black_price(sl.forward, m.strikes, tau, vol, sl.discount,
                                                   m.is_call)))


def portfolio_fair_pricing(m: Metaorder, slice_t0: SmileSlice, slice_t2: SmileSlice,
                           negate_sells: bool = True) -> FairPricingPoint:
    """Relative execution cost and relative revaluation of the metaorder's portfolio."""
    p0 = _reprice(m, slice_t0)
    if p0 == 0:
        raise UndefinedError("portfolio value at t0 is zero")
    x = (portfolio_value_at_fills(m) - p0) / p0
    y = (_reprice(m, slice_t2) - p0) / p0
    if negate_sells and m.sign < 0:
        x, y = -x, -y
    return FairPricingPoint(m.id, x, y)


def portfolio_fair_pricing_points(metaorders, history: SliceHistory,
                                  calendar: VenueCalendar = VenueCalendar(), n_buckets: int = 20,
                                  pre_trade: bool = True) -> FairPricingResult:
    """Portfolio-domain points for a population, repriced from calibrated slices.

    The t0 valuation uses the latest slice before the first fill (at the
    first fill when ``pre_trade`` is off). Metaorders whose window crosses
    the session close or whose slices are missing are excluded and counted.
    """
    ms = MetaorderSet.from_metaorders(metaorders)
    summ = ms.summary
    if len(summ) == 0:
        return _fit(pd.DataFrame(columns=["metaorder_id", "x", "y"]), n_buckets, 0, SELL_CONVENTION)
    complete = _complete_windows(summ, calendar)
    fills = ms.fills
    owner = ms.fill_metaorder_index()
    und = summ["underlying_id"].to_numpy()[owner]
    exp = fills["expiry"].to_numpy().astype(np.int64)
    t0 = summ["t0"].to_numpy().astype(np.int64)
    t2 = summ["t_end"].to_numpy().astype(np.int64) + summ["duration_ms"].to_numpy().astype(np.int64)
    q = fills["quantity"].to_numpy(float)
    K = fills["strike"].to_numpy(float)
    call = fills["is_call"].to_numpy(bool)

    def value_at(times, strict):
        rows = history.lookup(und, exp, times, strict=strict)
        if strict:
            rows = np.where(rows >= 0, rows, history.lookup(und, exp, times))
        F = history.column("forward", rows)
        tau = (exp - history.column("snapshot_time", rows)) / MS_PER_YEAR
        k = np.log(K / F)
        vol = (history.column("atmf_vol", rows) + history.column("atmf_skew", rows) * k
               + history.column("curvature", rows) * k * k)
        good = (rows >= 0) & (tau > 0) & (vol > 0)
        val = np.zeros(len(rows))
        if good.any():
            val[good] = black_price(F[good], K[good], tau[good], vol[good],
                                    history.column("discount", rows[good]), call[good])
        missing = np.bincount(owner, weights=~good, minlength=len(summ)) > 0
        return np.bincount(owner, weights=q * val, minlength=len(summ)), missing

    p0, miss0 = value_at(t0[owner], pre_trade)
    p2, miss2 = value_at(t2[owner], False)
    paid = np.bincount(owner, weights=q * fills["price"].to_numpy(float), minlength=len(summ))
    with np.errstate(invalid="ignore", divide="ignore"):
        x = (paid - p0) / p0
        y = (p2 - p0) / p0
    sign = summ["sign"].to_numpy()
    x, y = np.where(sign < 0, -x, x), np.where(sign < 0, -y, y)
    ok = complete & ~miss0 & ~miss2 & (p0 != 0) & np.isfinite(x) & np.isfinite(y)
    pts = pd.DataFrame({"metaorder_id": summ["metaorder_id"].to_numpy()[ok], "x": x[ok], "y": y[ok]})
    return _fit(pts, n_buckets, int((~ok).sum()), SELL_CONVENTION)


def scatter_by_size(points: pd.DataFrame, n_buckets: int = 10) -> pd.DataFrame:
    """Mean absolute distance to the diagonal per |x| bucket."""
    ax = np.abs(points["x"].to_numpy(float))
    resid = np.abs(points["y"].to_numpy(float) - points["x"].to_numpy(float))
    return bucket_stats(ax, resid, min(n_buckets, len(ax)))
