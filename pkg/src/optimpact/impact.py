"""Impact curves on rescaled time, bucketing, and the square-root-law fit.

Each metaorder contributes signed variations ``eps * (theta_t - theta_ref)``
at its fill times (execution phase, mapped to sensitivity time in [0, 1])
and on a uniform physical-time grid after its last fill (relaxation
phase, mapped to [1, 2]). Observations of all metaorders are pooled and
averaged in buckets of near-equal size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import paired_arrays
from .calendar import MS_PER_MINUTE, VenueCalendar
from .exceptions import DomainError, EmptySeriesError, FitError, SeriesLookupError
from .metaorder import MetaorderSet
from .volsurface import ParamSeries

DEFAULT_CURVE_BUCKETS = 50
DEFAULT_FIT_BUCKETS = 20


def variation_proxy(series: ParamSeries, t0, t) -> float:
    """theta_t - theta_t0 with last-value lookups."""
    if t < t0:
        raise DomainError("t must not precede t0")
    return series.value_at(t) - series.value_at(t0)


def _check_buckets(n_buckets) -> int:
    if int(n_buckets) != n_buckets or n_buckets < 1:
        raise DomainError(f"n_buckets must be an integer >= 1, got {n_buckets!r}")
    return int(n_buckets)


def _scramble(values: np.ndarray) -> np.ndarray:
    """Deterministic bit mix (splitmix64 finaliser) of float64 values."""
    z = np.ascontiguousarray(values, dtype=np.float64).view(np.uint64).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


def bucket_stats(x, y, n_buckets: int) -> pd.DataFrame:
    """Sort pairs by x and average them in ``n_buckets`` contiguous groups.

    Group sizes differ by at most one, larger groups first. Ties in x are
    broken by a hash of the y bits (then y itself), so the result does not
    depend on input order and a tied block is not split by the size of y,
    which would bias the neighbouring bucket means. Columns:
    ``x, y, count, se`` (standard error of the y mean).
    """
    x, y = paired_arrays(x, y)
    n_buckets = _check_buckets(n_buckets)
    if len(x) < n_buckets:
        raise DomainError(f"need at least {n_buckets} points, got {len(x)}")
    order = np.lexsort((y, _scramble(y), x))
    xs, ys = x[order], y[order]
    base, extra = divmod(len(xs), n_buckets)
    sizes = np.full(n_buckets, base)
    sizes[:extra] += 1
    first = np.r_[0, np.cumsum(sizes)[:-1]]
    mx = np.add.reduceat(xs, first) / sizes
    my = np.add.reduceat(ys, first) / sizes
    dev = ys - np.repeat(my, sizes)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.add.reduceat(dev * dev, first) / (sizes - 1)
        se = np.sqrt(var / sizes)
    return pd.DataFrame({"x": mx, "y": my, "count": sizes, "se": se})


def bucket_means(x, y, n_buckets: int) -> list:
    b = bucket_stats(x, y, n_buckets)
    return list(zip(b["x"].tolist(), b["y"].tolist()))


def _series_for(series, underlying) -> ParamSeries:
    if isinstance(series, ParamSeries):
        return series
    try:
        return series[underlying]
    except KeyError:
        raise SeriesLookupError(f"no parameter series for underlying {underlying!r}") from None


def reference_values(metaorders: MetaorderSet, series, pre_trade: bool = True):
    """theta at each metaorder start; NaN where the series does not reach back.

    With ``pre_trade`` the level is read one millisecond before the first
    fill, so a snapshot stamped at the first fill (which already shows
    that fill's impact) does not leak into the reference.
    """
    summ = metaorders.summary
    out = np.full(len(summ), np.nan)
    for und, pos in summ.groupby("underlying_id", sort=False).indices.items():
        s = _series_for(series, und)
        t0 = summ["t0"].to_numpy()[pos].astype(np.int64)
        idx = s.index_at(t0 - 1) if pre_trade else s.index_at(t0)
        idx = np.where(idx >= 0, idx, s.index_at(t0))
        out[pos] = np.where(idx >= 0, s.values[np.maximum(idx, 0)], np.nan)
    return out


def _values_at(series, underlyings: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.full(len(times), np.nan)
    for und, pos in pd.Series(underlyings).groupby(underlyings, sort=False).indices.items():
        s = _series_for(series, und)
        idx = s.index_at(times[pos])
        out[pos] = np.where(idx >= 0, s.values[np.maximum(idx, 0)], np.nan)
    return out


def impact_observations(metaorders: MetaorderSet, series, relaxation_samples: int,
                        pre_trade: bool = True) -> pd.DataFrame:
    """Pooled (metaorder, rescaled time, signed variation) observations."""
    relaxation_samples = _check_buckets(relaxation_samples)
    summ = metaorders.summary
    if len(summ) == 0:
        return pd.DataFrame({"metaorder": pd.Series(dtype=np.int64), "t": pd.Series(dtype=float),
                             "value": pd.Series(dtype=float)})
    fills = metaorders.fills
    n = summ["n"].to_numpy().astype(np.int64)
    owner = metaorders.fill_metaorder_index()
    ref = reference_values(metaorders, series, pre_trade)
    V = summ["V"].to_numpy(float)
    sign = summ["sign"].to_numpy()
    und = summ["underlying_id"].to_numpy()

    S = fills["S"].to_numpy(float)
    cum = np.cumsum(S)
    start = summ["start"].to_numpy().astype(np.int64)
    offset = np.repeat(cum[start] - S[start], n)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_exec = (cum - offset) / V[owner]
    theta_exec = _values_at(series, und[owner], fills["timestamp"].to_numpy().astype(np.int64))
    y_exec = sign[owner] * (theta_exec - ref[owner])

    m = len(summ)
    T = summ["duration_ms"].to_numpy().astype(np.int64)
    t_end = summ["t_end"].to_numpy().astype(np.int64)
    j = np.arange(1, relaxation_samples + 1, dtype=np.int64)
    offs = (j[None, :] * T[:, None]) // relaxation_samples
    t_rel = (t_end[:, None] + offs).ravel()
    owner_rel = np.repeat(np.arange(m), relaxation_samples)
    theta_rel = _values_at(series, und[owner_rel], t_rel)
    x_rel = 1.0 + offs.ravel() / T[owner_rel]
    y_rel = sign[owner_rel] * (theta_rel - ref[owner_rel])

    obs = pd.DataFrame({
        "metaorder": np.r_[owner, owner_rel],
        "t": np.r_[t_exec, x_rel],
        "value": np.r_[y_exec, y_rel],
    })
    # the last fill closes the execution phase exactly at t = 1
    last = np.r_[np.zeros(len(owner), bool), np.zeros(len(owner_rel), bool)]
    last[summ["stop"].to_numpy().astype(np.int64) - 1] = True
    obs.loc[last, "t"] = 1.0
    good = np.isfinite(obs["t"].to_numpy()) & np.isfinite(obs["value"].to_numpy())
    return obs[good].reset_index(drop=True)


@dataclass
class ImpactCurve:
    execution: pd.DataFrame
    relaxation: pd.DataFrame
    temporary_impact: float
    permanent_impact: float
    relaxation_ratio: float
    temporary_at_t1: float = math.nan
    permanent_at_t2: float = math.nan
    n_metaorders: int = 0
    n_observations: int = 0
    ratio_defined: bool = True
    unit: str = "parameter"

    @property
    def buckets(self) -> pd.DataFrame:
        return pd.concat([self.execution.assign(phase="execution"),
                          self.relaxation.assign(phase="relaxation")], ignore_index=True)


def permanent_level(relaxation: pd.DataFrame) -> float:
    """Mean of the last quartile of relaxation buckets."""
    q = max(1, math.ceil(len(relaxation) / 4))
    return float(relaxation["y"].to_numpy()[-q:].mean())


class ImpactCurveEstimator(BaseEstimator):
    """Bucketed impact curve from pooled (t, eps*I) observations.

    ``fit(X, y)`` takes rescaled times ``X`` in [0, 2] and signed
    variations ``y``; times up to 1 are execution, above 1 relaxation.
    """

    def __init__(self, n_buckets: int = DEFAULT_CURVE_BUCKETS):
        self.n_buckets = n_buckets

    def fit(self, X, y, n_metaorders: int = 0, unit: str = "parameter"):
        t, v = paired_arrays(X, y)
        if t.size == 0:
            raise EmptySeriesError("no impact observations to pool")
        if np.any((t < 0) | (t > 2)):
            raise DomainError("rescaled times must lie in [0, 2]")
        ex = t <= 1.0
        nb = _check_buckets(self.n_buckets)
        if ex.sum() < nb or (~ex).sum() < nb:
            raise DomainError(f"need at least {nb} observations in each phase")
        exe = bucket_stats(t[ex], v[ex], nb)
        rel = bucket_stats(t[~ex], v[~ex], nb)
        temp = float(exe["y"].max())
        perm = permanent_level(rel)
        defined = temp != 0
        at_t1 = v[t == 1.0]
        at_t2 = v[t >= 2.0 - 1e-12]
        self.curve_ = ImpactCurve(
            execution=exe, relaxation=rel, temporary_impact=temp, permanent_impact=perm,
            relaxation_ratio=perm / temp if defined else math.nan,
            temporary_at_t1=float(at_t1.mean()) if at_t1.size else math.nan,
            permanent_at_t2=float(at_t2.mean()) if at_t2.size else math.nan,
            n_metaorders=int(n_metaorders), n_observations=int(t.size), ratio_defined=defined,
            unit=unit)
        self.temporary_impact_ = temp
        self.permanent_impact_ = perm
        self.relaxation_ratio_ = self.curve_.relaxation_ratio
        return self

    def predict(self, X):
        """Piecewise-linear interpolation of the bucket means."""
        check_is_fitted(self, "curve_")
        b = self.curve_.buckets
        return np.interp(np.asarray(X, float), b["x"].to_numpy(), b["y"].to_numpy())


def impact_curve(metaorders, series, n_buckets: int = DEFAULT_CURVE_BUCKETS,
                 relaxation_samples: Optional[int] = None, pre_trade: bool = True,
                 scale: Optional[Mapping] = None) -> ImpactCurve:
    """Pooled impact curve of a metaorder population.

    ``scale`` optionally maps (underlying_id, day) to sigma^theta; the
    observations of each metaorder are then divided by it.
    """
    ms = MetaorderSet.from_metaorders(metaorders)
    if len(ms) == 0:
        raise EmptySeriesError("no metaorders")
    obs = impact_observations(ms, series, relaxation_samples or n_buckets, pre_trade)
    unit = "parameter"
    if scale is not None:
        sig = _lookup_scale(ms.summary, scale)
        obs["value"] = obs["value"] / sig[obs["metaorder"].to_numpy()]
        obs = obs[np.isfinite(obs["value"])]
        unit = "sigma"
    est = ImpactCurveEstimator(n_buckets).fit(obs["t"], obs["value"],
                                              n_metaorders=obs["metaorder"].nunique(), unit=unit)
    return est.curve_


def _lookup_scale(summary: pd.DataFrame, scale: Mapping) -> np.ndarray:
    keys = zip(summary["underlying_id"].to_numpy(), summary["day"].to_numpy().tolist())
    sig = np.array([scale.get((u, int(d)), np.nan) for u, d in keys], dtype=float)
    return np.where(sig > 0, sig, np.nan)


def daily_param_std(series: ParamSeries, day: int, calendar: VenueCalendar = VenueCalendar(),
                    grid_ms: int = MS_PER_MINUTE) -> float:
    """Unbiased std of the parameter resampled on a fixed grid over the day's session.

    Only calibrations of that day are used; grid points before the day's
    first calibration are dropped.
    """
    open_, close = calendar.session_bounds(day)
    lo = np.searchsorted(series.times, open_, side="left")
    hi = np.searchsorted(series.times, close, side="right")
    times, values = series.times[lo:hi], series.values[lo:hi]
    if times.size == 0:
        raise EmptySeriesError(f"no calibrations on day {VenueCalendar.day_label(day)}")
    grid = np.arange(open_, close + 1, int(grid_ms), dtype=np.int64)
    idx = np.searchsorted(times, grid, side="right") - 1
    sampled = values[idx[idx >= 0]]
    if sampled.size < 2:
        raise EmptySeriesError("fewer than two resampled points in the session")
    return float(np.std(sampled, ddof=1))


def daily_param_std_table(series: Mapping, days, calendar: VenueCalendar = VenueCalendar(),
                          grid_ms: int = MS_PER_MINUTE) -> dict:
    """sigma^theta for every (underlying, day) pair in ``days``; failures map to NaN."""
    out = {}
    for und, day in days:
        try:
            out[(und, int(day))] = daily_param_std(series[und], int(day), calendar, grid_ms)
        except (EmptySeriesError, KeyError):
            out[(und, int(day))] = math.nan
    return out


def end_of_execution_impact(metaorders: MetaorderSet, series, pre_trade: bool = True) -> np.ndarray:
    """eps * (theta at the last fill - reference) per metaorder."""
    summ = metaorders.summary
    ref = reference_values(metaorders, series, pre_trade)
    theta = _values_at(series, summ["underlying_id"].to_numpy(),
                       summ["t_end"].to_numpy().astype(np.int64))
    return summ["sign"].to_numpy() * (theta - ref)


@dataclass
class PowerLawFit:
    prefactor: float
    exponent: float
    r_squared: float
    n_points: int
    buckets: pd.DataFrame = field(default=None, repr=False)

    @property
    def stable(self) -> bool:
        return self.r_squared >= 0.5


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """y = prefactor * x**exponent fitted by OLS in log-log space.

    With ``bucketed`` the fit runs on bucket means (only buckets with a
    positive mean enter); otherwise on the raw positive points.
    """

    def __init__(self, n_buckets: int = DEFAULT_FIT_BUCKETS, bucketed: bool = True):
        self.n_buckets = n_buckets
        self.bucketed = bucketed

    def fit(self, X, y):
        x, y = paired_arrays(X, y)
        if np.any(x <= 0):
            raise DomainError("power-law regressors must be positive")
        if self.bucketed:
            b = bucket_stats(x, y, self.n_buckets)
        else:
            b = pd.DataFrame({"x": x, "y": y, "count": 1, "se": np.nan})
        pos = b[b["y"] > 0]
        if len(pos) < 3:
            raise FitError(f"need at least 3 positive points, got {len(pos)}")
        lx, ly = np.log(pos["x"].to_numpy()), np.log(pos["y"].to_numpy())
        slope, intercept = np.polyfit(lx, ly, 1)
        resid = ly - (intercept + slope * lx)
        sst = np.sum((ly - ly.mean()) ** 2)
        self.exponent_ = float(slope)
        self.prefactor_ = float(np.exp(intercept))
        self.r2_ = float(1.0 - np.sum(resid ** 2) / sst) if sst > 0 else 1.0
        self.n_points_ = int(len(pos))
        self.buckets_ = b
        return self

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        return self.prefactor_ * np.asarray(X, float) ** self.exponent_

    def to_result(self) -> PowerLawFit:
        check_is_fitted(self, "exponent_")
        return PowerLawFit(self.prefactor_, self.exponent_, self.r2_, self.n_points_, self.buckets_)


def sqrt_law_points(metaorders, series, market_V: Mapping, sigma: Mapping,
                    pre_trade: bool = True) -> pd.DataFrame:
    """Per-metaorder participation rate and normalised end-of-execution impact.

    ``market_V`` and ``sigma`` map (underlying_id, day) to the day's
    market sensitivity and sigma^theta. Metaorders lacking either are
    dropped.
    """
    ms = MetaorderSet.from_metaorders(metaorders)
    summ = ms.summary
    keys = list(zip(summ["underlying_id"].to_numpy(), summ["day"].to_numpy().astype(int).tolist()))
    mv = np.array([market_V.get(k, np.nan) for k in keys], dtype=float)
    sig = np.array([sigma.get(k, np.nan) for k in keys], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = summ["abs_V"].to_numpy(float) / mv
        y = end_of_execution_impact(ms, series, pre_trade) / sig
    ok = np.isfinite(rate) & (rate > 0) & np.isfinite(y) & (sig > 0)
    return pd.DataFrame({"metaorder_id": summ["metaorder_id"].to_numpy()[ok],
                         "rate": rate[ok], "y": y[ok]})


def sqrt_law_fit(metaorders, series, market_V: Mapping, sigma: Mapping,
                 n_buckets: int = DEFAULT_FIT_BUCKETS, bucketed: bool = True,
                 pre_trade: bool = True) -> PowerLawFit:
    pts = sqrt_law_points(metaorders, series, market_V, sigma, pre_trade)
    if len(pts) < max(3, n_buckets if bucketed else 3):
        raise FitError(f"only {len(pts)} usable metaorders for {n_buckets} buckets")
    return PowerLawRegressor(n_buckets, bucketed).fit(pts["rate"], pts["y"]).to_result()


def impact_vs_dispersion(metaorders, series, n_buckets: int = 10,
                         pre_trade: bool = True) -> pd.DataFrame:
    """Bucketed (sigma_{K/F}, eps * I_T) points."""
    ms = MetaorderSet.from_metaorders(metaorders)
    disp = ms.summary["dispersion"].to_numpy(float)
    imp = end_of_execution_impact(ms, series, pre_trade)
    ok = np.isfinite(disp) & np.isfinite(imp)
    return bucket_stats(disp[ok], imp[ok], n_buckets)


def shape_consistent(y, se, shape: str, n_se: float = 2.0) -> bool:
    """Whether some ``shape`` sequence lies within ``n_se`` standard errors of every mean.

    ``shape`` is ``"concave"`` or ``"convex_decreasing"``. Feasibility is
    decided by a linear programme over the candidate sequence.
    """
    from scipy.optimize import linprog

    y, se = paired_arrays(y, se)
    n = len(y)
    if shape not in ("concave", "convex_decreasing"):
        raise DomainError(f"unknown shape {shape!r}")
    if n < 3:
        return True
    rows = []
    for i in range(n - 2):
        r = np.zeros(n)
        r[i:i + 3] = (1.0, -2.0, 1.0)
        rows.append(r if shape == "concave" else -r)
    if shape == "convex_decreasing":
        for i in range(n - 1):
            r = np.zeros(n)
            r[i:i + 2] = (-1.0, 1.0)
            rows.append(r)
    # scale to unit standard errors so the tolerance is relative
    scale = np.where(se > 0, se, 1.0)
    A = np.array(rows) * scale
    half = n_se * np.where(se > 0, se, 0.0) / scale
    res = linprog(np.zeros(n), A_ub=A, b_ub=np.zeros(len(rows)),
                  bounds=list(zip(y / scale - half, y / scale + half)), method="highs")
    return bool(res.status == 0)
