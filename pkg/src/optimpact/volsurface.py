"""Quadratic implied-vol smile per maturity, snapshot calibration and
parameter sensitivities.

The smile in log-moneyness ``k = ln(K / F)`` is

    sigma(k) = atmf_vol + atmf_skew * k + curvature * k**2

so the at-the-money-forward level and slope are coordinates of the
model. Quotes are inverted to implied vols and fitted by weighted least
squares (vega weights unless the quote carries its own weight).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_parameter, check_positive, check_side
from .calendar import MS_PER_YEAR, VenueCalendar
from .exceptions import CalibrationError, DomainError, EmptySeriesError, SeriesLookupError
from .pricing import OptionSpec, black_vega, implied_vol_array

QUOTE_COLUMNS = ["snapshot_time", "underlying_id", "expiry", "strike", "kind", "mid", "forward"]


@dataclass(frozen=True)
class SmileSlice:
    underlying_id: str
    snapshot_time: int
    expiry: int
    forward: float
    atmf_vol: float
    atmf_skew: float
    curvature: float = 0.0
    discount: float = 1.0
    residual_rms: float = 0.0
    n_quotes: int = 0
    frozen_curvature: bool = False

    def __post_init__(self):
        check_positive(self.forward, "forward")
        check_positive(self.atmf_vol, "atmf_vol")

    @property
    def time_to_expiry(self) -> float:
        return (self.expiry - self.snapshot_time) / MS_PER_YEAR

    def param(self, parameter: str) -> float:
        return getattr(self, check_parameter(parameter))


class Quote(NamedTuple):
    spec: OptionSpec
    mid: float
    weight: Optional[float] = None


@dataclass
class QuoteSnapshot:
    underlying_id: str
    snapshot_time: int
    expiry: int
    quotes: list
    forward: Optional[float] = None
    discount: float = 1.0

    def __post_init__(self):
        self.quotes = [q if isinstance(q, Quote) else Quote(*q) for q in self.quotes]
        for q in self.quotes:
            if q.spec.expiry != self.expiry:
                raise DomainError("all quotes of a snapshot must share its expiry")

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "snapshot_time": self.snapshot_time, "underlying_id": self.underlying_id,
            "expiry": self.expiry, "strike": q.spec.strike, "kind": "C" if q.spec.is_call else "P",
            "mid": q.mid, "forward": np.nan if self.forward is None else self.forward,
            "weight": np.nan if q.weight is None else q.weight, "discount": self.discount,
        } for q in self.quotes]
        return pd.DataFrame(rows, columns=QUOTE_COLUMNS + ["weight", "discount"])


@dataclass
class ParamSeries:
    """Time-ordered calibrated values of one smile parameter."""

    underlying_id: str
    parameter: str
    times: np.ndarray
    values: np.ndarray
    n_skipped: int = 0
    forwards: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        check_parameter(self.parameter)
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise DomainError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("series timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("series values must be finite")

    def __len__(self):
        return len(self.times)

    @property
    def points(self):
        return list(zip(self.times.tolist(), self.values.tolist()))

    def index_at(self, t, strict: bool = False):
        """Index of the last point at (or strictly before) each time; -1 if none."""
        side = "left" if strict else "right"
        return np.searchsorted(self.times, np.asarray(t, dtype=np.int64), side=side) - 1

    def values_at(self, t, strict: bool = False):
        idx = self.index_at(t, strict)
        if np.any(idx < 0):
            raise SeriesLookupError("no calibrated value at or before the requested time")
        return self.values[idx]

    def value_at(self, t, strict: bool = False) -> float:
        return float(self.values_at(np.asarray([t]), strict)[0])


def smile_vol(slice: SmileSlice, strike) -> float:
    strike = np.asarray(strike, dtype=float)
    if np.any(~(strike > 0)):
        raise DomainError("strike must be > 0")
    k = np.log(strike / slice.forward)
    out = slice.atmf_vol + slice.atmf_skew * k + slice.curvature * k * k
    return out if out.ndim else float(out)


def forward_from_parity(call_mid, put_mid, strike, discount=1.0) -> float:
    d = float(discount)
    if not 0.0 < d <= 1.0:
        raise DomainError(f"discount must lie in (0, 1], got {d!r}")
    fwd = float(strike) + (float(call_mid) - float(put_mid)) / d
    if not np.isfinite(fwd):
        raise DomainError("parity forward is not finite")
    return fwd


def dsigma_dtheta(log_moneyness, parameter: str):
    """Chain-rule factor of the smile: 1 for the level, k for the skew."""
    check_parameter(parameter)
    k = np.asarray(log_moneyness, dtype=float)
    return np.ones_like(k) if parameter == "atmf_vol" else k


def sensitivity_array(forward, strike, tau, atmf_vol, atmf_skew, curvature, side, quantity,
                      parameter: str, discount=1.0):
    """Vectorised S = side * quantity * vega * dsigma/dtheta under the smile."""
    k = np.log(np.asarray(strike, float) / np.asarray(forward, float))
    vol = atmf_vol + atmf_skew * k + curvature * k * k
    v = black_vega(forward, strike, tau, vol, discount)
    return np.asarray(side) * np.asarray(quantity) * v * dsigma_dtheta(k, parameter)


def param_sensitivity(slice: SmileSlice, spec: OptionSpec, side, quantity: float,
                      parameter: str) -> float:
    side = check_side(side)
    quantity = check_positive(quantity, "quantity")
    tau = (spec.expiry - slice.snapshot_time) / MS_PER_YEAR
    if tau <= 0:
        raise DomainError("slice snapshot is not before the option expiry")
    return float(sensitivity_array(slice.forward, spec.strike, tau, slice.atmf_vol,
                                   slice.atmf_skew, slice.curvature, side, quantity,
                                   parameter, slice.discount))


def _design(k, fixed_curvature):
    cols = [np.ones_like(k), k] if fixed_curvature else [np.ones_like(k), k, k * k]
    return np.stack(cols, axis=-1)


def _wls_batched(k, y, w, group, n_groups, curvature=None):
    """Weighted least squares of the quadratic smile, one fit per group.

    Rows of a group are padded to a common length with zero weight and
    the stacked systems are solved with a batched QR. With ``curvature``
    (array per group) the k**2 coefficient is held fixed.
    Returns ``(params (G, 3), weighted residual rms (G,))``.
    """
    order = np.argsort(group, kind="stable")
    g = group[order]
    counts = np.bincount(g, minlength=n_groups)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pos = np.arange(len(g)) - starts[g]
    m = max(int(counts.max(initial=0)), 3)
    fixed = curvature is not None
    ncol = 2 if fixed else 3
    A = np.zeros((n_groups, m, ncol))
    b = np.zeros((n_groups, m))
    sw = np.sqrt(w[order])
    kk = k[order]
    target = y[order] - (curvature[g] * kk * kk if fixed else 0.0)
    A[g, pos] = _design(kk, fixed) * sw[:, None]
    b[g, pos] = target * sw
    Q, R = np.linalg.qr(A)
    rhs = np.einsum("gmc,gm->gc", Q, b)
    coef = np.linalg.solve(R, rhs[..., None])[..., 0]
    params = np.zeros((n_groups, 3))
    params[:, :ncol] = coef
    if fixed:
        params[:, 2] = curvature
    fitted = params[g, 0] + params[g, 1] * kk + params[g, 2] * kk * kk
    resid2 = w[order] * (y[order] - fitted) ** 2
    wsum = np.bincount(g, weights=w[order], minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.sqrt(np.bincount(g, weights=resid2, minlength=n_groups) / wsum)
    return params, rms


class QuadraticSmile(RegressorMixin, BaseEstimator):
    """Weighted least-squares quadratic smile in log-moneyness.

    ``fit(X, y)`` takes log-moneyness ``X`` (n,) or (n, 1) and implied vols
    ``y``. With ``curvature`` set, only level and skew are estimated.
    """

    def __init__(self, curvature: Optional[float] = None):
        self.curvature = curvature

    def fit(self, X, y, sample_weight=None):
        k = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if k.shape != y.shape:
            raise DomainError("X and y have inconsistent lengths")
        w = np.ones_like(k) if sample_weight is None else np.asarray(sample_weight, float).reshape(-1)
        if np.any(w < 0) or not np.any(w > 0):
            raise DomainError("sample weights must be nonnegative and not all zero")
        need = 2 if self.curvature is not None else 3
        if np.unique(k[w > 0]).size < need:
            raise CalibrationError(f"need at least {need} distinct strikes, got {np.unique(k).size}")
        curv = None if self.curvature is None else np.array([float(self.curvature)])
        params, rms = _wls_batched(k, y, w, np.zeros(k.size, dtype=np.int64), 1, curv)
        self.coef_ = params[0]
        self.residual_rms_ = float(rms[0])
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        k = np.asarray(X, dtype=float).reshape(-1)
        a, b, c = self.coef_
        return a + b * k + c * k * k


def _parity_forwards(df: pd.DataFrame, hint: Optional[float] = None) -> float:
    """Parity forward from the call/put pair nearest the last forward estimate."""
    calls = df[df["is_call"]].groupby("strike")["mid"].first()
    puts = df[~df["is_call"]].groupby("strike")["mid"].first()
    both = calls.index.intersection(puts.index)
    if len(both) == 0:
        return np.nan
    ref = hint if hint is not None and np.isfinite(hint) else float(np.median(both))
    K = both[np.argmin(np.abs(np.asarray(both) - ref))]
    return forward_from_parity(calls[K], puts[K], K, float(df["discount"].iloc[0]))


def prepare_quotes(quotes: pd.DataFrame) -> pd.DataFrame:
    """Normalise a quote frame: typed columns, ``is_call``, weight/discount defaults."""
    df = quotes.copy()
    if "is_call" not in df:
        df["is_call"] = df["kind"].astype(str).str.upper().str[0].eq("C")
    for col, default in (("forward", np.nan), ("weight", np.nan), ("discount", 1.0)):
        if col not in df:
            df[col] = default
    df["snapshot_time"] = df["snapshot_time"].astype(np.int64)
    df["expiry"] = df["expiry"].astype(np.int64)
    return df


def calibrate_quotes(quotes: pd.DataFrame, weighting: str = "vega", fit_curvature: bool = True,
                     min_strikes: int = 3, prior_curvature: Optional[float] = None) -> pd.DataFrame:
    """Calibrate every (underlying, expiry, snapshot_time) group of a quote frame.

    Returns one row per group with the fitted parameters and a ``status``:
    ``ok``, ``frozen`` (two strikes, curvature carried from the previous
    slice of the same underlying/expiry), or a failure reason.
    """
    if weighting not in ("vega", "uniform"):
        raise DomainError(f"unknown weighting {weighting!r}")
    df = prepare_quotes(quotes)
    keys = ["underlying_id", "expiry", "snapshot_time"]
    df = df.sort_values(keys, kind="stable").reset_index(drop=True)
    grp = df.groupby(keys, sort=False, observed=True)
    gid = grp.ngroup().to_numpy()
    out = grp.agg(n_rows=("mid", "size"), forward=("forward", "first"),
                  discount=("discount", "first")).reset_index()
    G = len(out)
    if G == 0:
        return _empty_slices()

    # forwards: explicit column first, put-call parity otherwise
    fwd = out["forward"].to_numpy(float).copy()
    last = {}
    for g in range(G):
        if not np.isfinite(fwd[g]):
            key = (out.at[g, "underlying_id"], out.at[g, "expiry"])
            fwd[g] = _parity_forwards(df[gid == g], last.get(key))
        if np.isfinite(fwd[g]) and fwd[g] > 0:
            last[(out.at[g, "underlying_id"], out.at[g, "expiry"])] = fwd[g]
    out["forward"] = fwd
    out["forward_source"] = np.where(df.groupby(gid)["forward"].first().notna().to_numpy(),
                                     "column", "parity")

    F = fwd[gid]
    tau = (df["expiry"].to_numpy() - df["snapshot_time"].to_numpy()) / MS_PER_YEAR
    K = df["strike"].to_numpy(float)
    D = df["discount"].to_numpy(float)
    good_f = np.isfinite(F) & (F > 0) & (tau > 0) & (K > 0)
    iv = np.full(len(df), np.nan)
    if good_f.any():
        iv[good_f] = implied_vol_array(df["mid"].to_numpy(float)[good_f], F[good_f], K[good_f],
                                       tau[good_f], D[good_f], df["is_call"].to_numpy()[good_f])
    usable = np.isfinite(iv)
    k = np.full(len(df), np.nan)
    k[good_f] = np.log(K[good_f] / F[good_f])
    if weighting == "vega":
        w = np.zeros(len(df))
        w[usable] = black_vega(F[usable], K[usable], tau[usable], iv[usable], D[usable])
    else:
        w = usable.astype(float)
    given = df["weight"].to_numpy(float)
    w = np.where(np.isfinite(given) & usable, given, w)
    usable &= w > 0

    n_strikes = (pd.DataFrame({"g": gid[usable], "K": K[usable]}).drop_duplicates()
                 .groupby("g").size().reindex(range(G), fill_value=0).to_numpy())
    out["n_quotes"] = np.bincount(gid[usable], minlength=G)
    out["n_excluded"] = out["n_rows"] - out["n_quotes"]
    status = np.full(G, "insufficient_strikes", dtype=object)
    status[~(np.isfinite(fwd) & (fwd > 0))] = "no_forward"
    params = np.full((G, 3), np.nan)
    rms = np.full(G, np.nan)

    full = (n_strikes >= max(min_strikes, 3)) & (status != "no_forward") if fit_curvature else \
        np.zeros(G, bool)
    if full.any():
        sel = usable & full[gid]
        remap = np.cumsum(full) - 1
        p, r = _wls_batched(k[sel], iv[sel], w[sel], remap[gid[sel]], int(full.sum()))
        params[full], rms[full] = p, r
        status[full] = "ok"

    # two usable strikes, or curvature not fitted: hold curvature at the previous slice's value
    thin = (n_strikes >= 2) & ~full & (status != "no_forward")
    if thin.any():
        carried = pd.Series(np.where(full, params[:, 2], np.nan))
        carried = carried.groupby([out["underlying_id"], out["expiry"]], observed=True).shift(1)
        carried = carried.groupby([out["underlying_id"], out["expiry"]], observed=True).ffill()
        prev = carried.to_numpy()
        if prior_curvature is not None:
            prev = np.where(np.isfinite(prev), prev, float(prior_curvature))
        if not fit_curvature:
            prev = np.where(np.isfinite(prev), prev, 0.0 if prior_curvature is None else prior_curvature)
        thin &= np.isfinite(prev)
        if thin.any():
            sel = usable & thin[gid]
            remap = np.cumsum(thin) - 1
            p, r = _wls_batched(k[sel], iv[sel], w[sel], remap[gid[sel]], int(thin.sum()),
                                curvature=prev[thin])
            params[thin], rms[thin] = p, r
            status[thin] = "frozen" if fit_curvature else "ok"

    fitted = np.isin(status, ("ok", "frozen"))
    if fitted.any():
        kmin = pd.Series(np.where(usable, k, np.inf)).groupby(gid).min().to_numpy()
        kmax = pd.Series(np.where(usable, k, -np.inf)).groupby(gid).max().to_numpy()
        a, b, c = params[:, 0], params[:, 1], params[:, 2]
        with np.errstate(invalid="ignore", divide="ignore"):
            vertex = np.where(c != 0, -b / (2 * c), kmin)
        vertex = np.clip(vertex, kmin, kmax)
        lowest = np.minimum.reduce([a + b * x + c * x * x for x in (kmin, kmax, vertex)])
        bad = fitted & ~(lowest > 0)
        status[bad] = "nonpositive_smile"

    out["atmf_vol"], out["atmf_skew"], out["curvature"] = params.T
    out["residual_rms"] = rms
    out["status"] = status
    out["frozen_curvature"] = status == "frozen"
    return out[SLICE_COLUMNS]


SLICE_COLUMNS = ["underlying_id", "expiry", "snapshot_time", "forward", "discount", "atmf_vol",
                 "atmf_skew", "curvature", "residual_rms", "n_quotes", "n_excluded",
                 "forward_source", "frozen_curvature", "status"]


def _empty_slices() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=float) for c in SLICE_COLUMNS})


def calibrate_slice(snapshot: QuoteSnapshot, weighting: str = "vega", fit_curvature: bool = True,
                    prior_curvature: Optional[float] = None) -> SmileSlice:
    """Fit one snapshot; raises :class:`CalibrationError` if it cannot be fitted."""
    if not snapshot.quotes:
        raise CalibrationError("snapshot has no quotes")
    row = calibrate_quotes(snapshot.to_frame(), weighting, fit_curvature,
                           prior_curvature=prior_curvature).iloc[0]
    if row["status"] not in ("ok", "frozen"):
        raise CalibrationError(f"calibration failed: {row['status']} "
                               f"({int(row['n_quotes'])} usable quotes)")
    return slice_from_row(row)


def slice_from_row(row) -> SmileSlice:
    return SmileSlice(
        underlying_id=str(row["underlying_id"]), snapshot_time=int(row["snapshot_time"]),
        expiry=int(row["expiry"]), forward=float(row["forward"]), atmf_vol=float(row["atmf_vol"]),
        atmf_skew=float(row["atmf_skew"]), curvature=float(row["curvature"]),
        discount=float(row["discount"]), residual_rms=float(row["residual_rms"]),
        n_quotes=int(row["n_quotes"]), frozen_curvature=bool(row["frozen_curvature"]))


def build_param_series(snapshots: Sequence[QuoteSnapshot], parameter: str,
                       weighting: str = "vega") -> ParamSeries:
    """Calibrate a time-ordered run of snapshots of one underlying/expiry."""
    check_parameter(parameter)
    if not snapshots:
        raise EmptySeriesError("no snapshots given")
    underlying = snapshots[0].underlying_id
    times, values, skipped = [], [], 0
    prior = None
    last_t = None
    for snap in snapshots:
        if snap.underlying_id != underlying:
            raise DomainError("snapshots of a series must share one underlying")
        if last_t is not None and snap.snapshot_time <= last_t:
            raise DomainError("snapshots must be strictly time-ordered")
        last_t = snap.snapshot_time
        try:
            sl = calibrate_slice(snap, weighting, prior_curvature=prior)
        except CalibrationError:
            skipped += 1
            continue
        prior = sl.curvature
        times.append(sl.snapshot_time)
        values.append(sl.param(parameter))
    if not times:
        raise EmptySeriesError(f"none of {len(snapshots)} snapshots could be calibrated")
    return ParamSeries(underlying, parameter, np.array(times), np.array(values), n_skipped=skipped)


class SliceHistory:
    """Calibrated slices indexed by (underlying, expiry) for as-of lookups."""

    def __init__(self, slices: pd.DataFrame):
        ok = slices[slices["status"].isin(["ok", "frozen"])] if "status" in slices else slices
        ok = ok.sort_values(["underlying_id", "expiry", "snapshot_time"], kind="stable")
        self.frame = ok.reset_index(drop=True)
        self._groups = {}
        for key, idx in self.frame.groupby(["underlying_id", "expiry"], sort=True,
                                           observed=True).indices.items():
            self._groups[(str(key[0]), int(key[1]))] = idx
        cols = ["snapshot_time", "forward", "discount", "atmf_vol", "atmf_skew", "curvature"]
        self._arr = {c: self.frame[c].to_numpy() for c in cols}

    def __len__(self):
        return len(self.frame)

    def lookup(self, underlying, expiry, times, strict: bool = False) -> np.ndarray:
        """Row positions of the latest slice at (or strictly before) each time; -1 if none.

        ``underlying``/``expiry`` may be scalars or arrays aligned with ``times``.
        """
        times = np.asarray(times, dtype=np.int64)
        und = np.broadcast_to(np.asarray(underlying, dtype=object), times.shape)
        exp = np.broadcast_to(np.asarray(expiry, dtype=np.int64), times.shape)
        out = np.full(times.shape, -1, dtype=np.int64)
        if times.size == 0:
            return out
        keys = pd.DataFrame({"u": und.astype(str), "e": exp})
        for (u, e), pos in keys.groupby(["u", "e"], sort=False).indices.items():
            rows = self._groups.get((str(u), int(e)))
            if rows is None:
                continue
            t = self._arr["snapshot_time"][rows]
            j = np.searchsorted(t, times[pos], side="left" if strict else "right") - 1
            out[pos] = np.where(j >= 0, rows[np.maximum(j, 0)], -1)
        return out

    def column(self, name: str, rows: np.ndarray) -> np.ndarray:
        vals = self._arr[name][np.maximum(rows, 0)].astype(float)
        return np.where(rows >= 0, vals, np.nan)

    def slice_at(self, underlying: str, expiry: int, t: int, strict: bool = False) -> SmileSlice:
        row = int(self.lookup(underlying, expiry, [t], strict)[0])
        if row < 0:
            raise SeriesLookupError(f"no slice for {underlying} expiry {expiry} at or before {t}")
        return slice_from_row(self.frame.iloc[row])

    def target_expiries(self, calendar: VenueCalendar) -> pd.DataFrame:
        """Per (underlying, day) the nearest expiry after that day's session close."""
        f = self.frame
        day = calendar.day_of(f["snapshot_time"].to_numpy())
        close = calendar.session_bounds(day)[1]
        cand = pd.DataFrame({"underlying_id": f["underlying_id"].astype(str).to_numpy(), "day": day,
                             "expiry": f["expiry"].to_numpy(),
                             "after": f["expiry"].to_numpy() > close})
        # rank: expiries after the close first, then nearest
        cand = cand.sort_values(["underlying_id", "day", "after", "expiry"],
                                ascending=[True, True, False, True], kind="stable")
        return cand.drop_duplicates(["underlying_id", "day"])[["underlying_id", "day", "expiry"]]

    def param_series(self, parameter: str, calendar: VenueCalendar = VenueCalendar()) -> dict:
        """One :class:`ParamSeries` per underlying on the nearest short maturity of each day."""
        check_parameter(parameter)
        if len(self.frame) == 0:
            return {}
        f = self.frame
        day = calendar.day_of(f["snapshot_time"].to_numpy())
        tgt = self.target_expiries(calendar)
        sel = pd.DataFrame({"underlying_id": f["underlying_id"].astype(str).to_numpy(), "day": day,
                            "expiry": f["expiry"].to_numpy(), "row": np.arange(len(f))})
        sel = sel.merge(tgt, on=["underlying_id", "day", "expiry"])
        out = {}
        for und, part in sel.groupby("underlying_id", sort=True):
            rows = part["row"].to_numpy()
            t = self._arr["snapshot_time"][rows].astype(np.int64)
            order = np.argsort(t, kind="stable")
            rows, t = rows[order], t[order]
            keep = np.concatenate(([True], np.diff(t) > 0))
            rows, t = rows[keep], t[keep]
            out[und] = ParamSeries(und, parameter, t, self._arr[parameter][rows].astype(float),
                                   forwards=self._arr["forward"][rows].astype(float))
        return out


def replace_param(slice: SmileSlice, parameter: str, value: float) -> SmileSlice:
    return replace(slice, **{check_parameter(parameter): value})
