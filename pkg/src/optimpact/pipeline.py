"""End-to-end analysis: calibrate, stitch, filter, then impact, square-root
and fair-pricing diagnostics.

Work is split into independent per-day units (metaorders never span
days and fills are priced from same-day slices only), which may run in
a process pool. Their results are merged in day order, so the output
does not depend on the number of workers.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from ._validation import check_parameter
from .calendar import VenueCalendar
from .exceptions import ConfigError, OptImpactError
from .fairpricing import (FairPricingResult, _fit, fair_pricing_points,
                          portfolio_fair_pricing_points, scatter_by_size, SELL_CONVENTION)
from .impact import (ImpactCurve, daily_param_std, impact_curve, impact_vs_dispersion, shape_consistent,
                     sqrt_law_fit)
from .io import read_quotes, read_trades, write_csv, write_json
from .metaorder import (MetaorderSet, _empty_summary, attach_sensitivities,
                        market_sensitivity_by_day, stitch_frame)
from .volsurface import ParamSeries, SliceHistory, calibrate_quotes

ALL_STAGES = ("calibrate", "stitch", "histograms", "impact", "dispersion", "sqrtlaw", "fairpricing")


@dataclass
class PipelineConfig:
    trades: Optional[str] = None
    quotes: Optional[str] = None
    output_dir: str = "out"
    parameter: str = "atmf_vol"
    utc_offset_minutes: int = 0
    session_open: str = "00:00"
    session_close: str = "24:00"
    n_star: int = 5
    length_filters: tuple = (10, 15)
    curve_buckets: int = 50
    relaxation_samples: Optional[int] = None
    fit_buckets: int = 20
    dispersion_buckets: int = 10
    fair_buckets: int = 20
    histogram_bins: int = 30
    resample_grid_s: int = 60
    weighting: str = "vega"
    max_gap_s: Optional[float] = None
    raw_fit: bool = False
    pre_trade_reference: bool = True
    day_count: str = "ACT/365"
    discount: float = 1.0
    workers: int = 1

    def __post_init__(self):
        try:
            check_parameter(self.parameter)
        except OptImpactError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.length_filters, str):
            self.length_filters = tuple(int(v) for v in self.length_filters.replace(",", " ").split())
        self.length_filters = tuple(int(v) for v in self.length_filters)
        if self.n_star < 1 or any(v < 1 for v in self.length_filters):
            raise ConfigError("length thresholds must be >= 1")
        for name in ("curve_buckets", "fit_buckets", "dispersion_buckets", "fair_buckets",
                     "histogram_bins", "resample_grid_s", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.relaxation_samples is not None and self.relaxation_samples < 1:
            raise ConfigError("relaxation_samples must be >= 1")
        if self.day_count.upper().replace(" ", "") not in ("ACT/365", "ACT365"):
            raise ConfigError(f"unsupported day count {self.day_count!r}; only ACT/365")
        if not 0 < self.discount <= 1:
            raise ConfigError("discount must lie in (0, 1]")
        if self.weighting not in ("vega", "uniform"):
            raise ConfigError("weighting must be vega or uniform")
        self.calendar  # validates session times

    @property
    def calendar(self) -> VenueCalendar:
        try:
            return VenueCalendar(int(self.utc_offset_minutes), self.session_open, self.session_close)
        except OptImpactError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def samples(self) -> int:
        return self.relaxation_samples or self.curve_buckets

    def check_paths(self, required=("trades", "quotes")):
        for name in required:
            p = getattr(self, name)
            if p is None or not Path(p).exists():
                raise ConfigError(f"{name} file not found: {p}")


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def coerce_field(name: str, text):
    """Parse a config value given as text into the field's type."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    if text is None or not isinstance(text, str):
        return text
    default = _FIELDS[name].default
    t = text.strip()
    if name in ("relaxation_samples", "max_gap_s", "trades", "quotes") and t.lower() in ("", "none"):
        return None
    try:
        if isinstance(default, bool):
            if t.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(t)
            return t.lower() in ("1", "true", "yes", "on")
        if name in ("relaxation_samples",) or isinstance(default, int):
            return int(t)
        if name == "max_gap_s" or isinstance(default, float):
            return float(t)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return t


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read an INI file (section ``[pipeline]``) and apply keyword overrides.

    Grammar: ``key = value`` lines under ``[pipeline]``, keys named as the
    :class:`PipelineConfig` fields; ``none`` or an empty value clears an
    optional field; ``length_filters`` is a comma- or space-separated list.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            if not parser.read(path):
                raise ConfigError(f"config file not found: {path}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file: {exc}") from None
        if not parser.has_section("pipeline"):
            raise ConfigError("config file needs a [pipeline] section")
        base = Path(path).resolve().parent
        for key, val in parser.items("pipeline"):
            values[key] = coerce_field(key, val)
            # relative input paths in a config file are relative to the file itself
            if key in ("trades", "quotes") and values[key] and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    for key, val in overrides.items():
        if val is not None:
            values[key] = coerce_field(key, val)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class DayResult:
    day: int
    fills: pd.DataFrame
    summary: pd.DataFrame
    series: dict
    sigma: dict
    market_V: dict
    portfolio: pd.DataFrame
    quarantined: pd.DataFrame
    n_passive: int
    snapshots: dict
    slices: Optional[pd.DataFrame] = None


def process_day(day: int, quotes: pd.DataFrame, trades: pd.DataFrame, cfg: PipelineConfig,
                keep_slices: bool = False) -> DayResult:
    cal = cfg.calendar
    if "discount" not in quotes:
        quotes = quotes.assign(discount=cfg.discount)
    slices = calibrate_quotes(quotes, cfg.weighting) if len(quotes) else None
    status = slices["status"].value_counts().to_dict() if slices is not None else {}
    snap = {"total": int(sum(status.values())),
            "calibrated": int(status.get("ok", 0) + status.get("frozen", 0)),
            "frozen": int(status.get("frozen", 0))}
    snap["skipped"] = snap["total"] - snap["calibrated"]
    history = SliceHistory(slices if slices is not None else _no_slices())
    series = history.param_series(cfg.parameter, cal) if len(history) else {}
    sigma = {}
    for und, s in series.items():
        try:
            sigma[(und, day)] = daily_param_std(s, day, cal, cfg.resample_grid_s * 1000)
        except OptImpactError:
            sigma[(und, day)] = math.nan
    priced, quarantined = attach_sensitivities(trades, history, cfg.parameter, cal)
    mV = {(u, int(d)): float(v) for (u, d), v in market_sensitivity_by_day(priced).items()}
    aggressive = priced[priced["aggressive"]]
    fills, summary = stitch_frame(aggressive, cfg.parameter, cfg.max_gap_s, cal)
    ms = MetaorderSet(fills, summary, cfg.parameter)
    portfolio = portfolio_fair_pricing_points(ms, history, cal, cfg.fair_buckets,
                                              cfg.pre_trade_reference).points
    return DayResult(day, fills, summary, series, sigma, mV, portfolio, quarantined,
                     int((~priced["aggressive"]).sum()), snap,
                     slices if keep_slices else None)


def _no_slices() -> pd.DataFrame:
    from .volsurface import SLICE_COLUMNS
    return pd.DataFrame({c: pd.Series(dtype=float) for c in SLICE_COLUMNS}).astype(
        {"underlying_id": object, "status": object})


def _process_unit(args):
    return process_day(*args)


@dataclass
class Dataset:
    """Everything the analyses need, merged over days."""

    metaorders: MetaorderSet
    series: dict
    sigma: dict
    market_V: dict
    portfolio: pd.DataFrame
    quarantined: pd.DataFrame
    n_passive: int
    snapshots: dict
    slices: Optional[pd.DataFrame] = None


def merge_days(results: Iterable[DayResult], parameter: str) -> Dataset:
    results = sorted(results, key=lambda r: r.day)
    fills = [r.fills for r in results if len(r.fills)]
    summ = [r.summary for r in results if len(r.summary)]
    if fills:
        all_fills = pd.concat(fills, ignore_index=True)
        summary = pd.concat(summ, ignore_index=True)
        n = summary["n"].to_numpy().astype(np.int64)
        summary["start"] = np.cumsum(n) - n
        summary["stop"] = np.cumsum(n)
    else:
        all_fills, summary = pd.DataFrame(columns=["timestamp", "S"]), _empty_summary()
    parts: dict = {}
    for r in results:
        for und, s in r.series.items():
            parts.setdefault(und, []).append(s)
    series = {}
    for und, ss in sorted(parts.items()):
        series[und] = ParamSeries(und, parameter, np.concatenate([s.times for s in ss]),
                                  np.concatenate([s.values for s in ss]))
    sigma, mV = {}, {}
    snaps = {"total": 0, "calibrated": 0, "frozen": 0, "skipped": 0}
    for r in results:
        sigma.update(r.sigma)
        mV.update(r.market_V)
        for k in snaps:
            snaps[k] += r.snapshots[k]
    port = [r.portfolio for r in results if len(r.portfolio)]
    quar = [r.quarantined for r in results if len(r.quarantined)]
    sl = [r.slices for r in results if r.slices is not None]
    return Dataset(
        MetaorderSet(all_fills, summary, parameter), series, sigma, mV,
        pd.concat(port, ignore_index=True) if port else pd.DataFrame(columns=["metaorder_id", "x", "y"]),
        pd.concat(quar, ignore_index=True) if quar else pd.DataFrame(columns=["line", "reason"]),
        sum(r.n_passive for r in results), snaps,
        pd.concat(sl, ignore_index=True) if sl else None)


def split_by_day(frame: pd.DataFrame, time_col: str, cal: VenueCalendar) -> dict:
    if len(frame) == 0:
        return {}
    day = cal.day_of(frame[time_col].to_numpy())
    return {int(d): frame.iloc[idx] for d, idx in pd.Series(day).groupby(day).indices.items()}


def build_dataset(trades: pd.DataFrame, quotes: pd.DataFrame, cfg: PipelineConfig,
                  keep_slices: bool = False) -> Dataset:
    cal = cfg.calendar
    tq = split_by_day(quotes, "snapshot_time", cal)
    tt = split_by_day(trades, "timestamp", cal)
    empty_q = quotes.iloc[:0]
    empty_t = trades.iloc[:0]
    units = [(d, tq.get(d, empty_q), tt.get(d, empty_t), cfg, keep_slices)
             for d in sorted(set(tq) | set(tt))]
    if cfg.workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_process_unit, units))
    else:
        results = [process_day(*u) for u in units]
    return merge_days(results, cfg.parameter)


@dataclass
class RunReport:
    counts: dict
    analyses: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    @property
    def reconciled(self) -> bool:
        c = self.counts
        return c["orders_ingested"] == c["assigned"] + c["quarantined"] + c["passive_excluded"]

    def to_dict(self) -> dict:
        return {"counts": self.counts, "analyses": self.analyses, "warnings": self.warnings,
                "errors": self.errors, "reconciled": self.reconciled}


def _curve_record(curve: ImpactCurve) -> dict:
    return {"temporary_impact": curve.temporary_impact, "permanent_impact": curve.permanent_impact,
            "relaxation_ratio": curve.relaxation_ratio, "ratio_defined": curve.ratio_defined,
            "temporary_at_t1": curve.temporary_at_t1, "permanent_at_t2": curve.permanent_at_t2,
            "n_metaorders": curve.n_metaorders, "n_observations": curve.n_observations,
            "unit": curve.unit,
            "execution_concave": shape_consistent(curve.execution["y"], curve.execution["se"], "concave"),
            "relaxation_convex_decreasing": shape_consistent(
                curve.relaxation["y"], curve.relaxation["se"], "convex_decreasing")}


def _fair_record(res: FairPricingResult) -> dict:
    return {"slope": res.slope, "raw_slope": res.raw_slope, "n_points": len(res.points),
            "n_excluded": res.n_excluded, "convention": res.convention or None}


def _histogram(values, bins: int, log: bool):
    v = np.asarray(values, float)
    v = v[np.isfinite(v) & ((v > 0) if log else True)]
    if v.size == 0:
        return pd.DataFrame(columns=["lo", "hi", "count"])
    lo, hi = v.min(), v.max()
    if lo == hi:
        edges = np.array([lo, hi])
    elif log:
        edges = np.geomspace(lo, hi, bins + 1)
    else:
        edges = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(v, bins=edges)
    return pd.DataFrame({"lo": edges[:-1], "hi": edges[1:], "count": counts})


def analyse(ds: Dataset, cfg: PipelineConfig, stages=ALL_STAGES, n_ingested: Optional[int] = None,
            n_malformed: int = 0) -> RunReport:
    """Run the requested analyses on a merged dataset.

    Analyses short of data get an ``insufficient_data`` marker; any other
    failure is recorded under ``errors`` with the stage name.
    """
    ms = ds.metaorders
    n_q = len(ds.quarantined) + n_malformed
    assigned = len(ms.fills)
    counts = {
        "orders_ingested": int(n_ingested if n_ingested is not None else assigned + n_q + ds.n_passive),
        "malformed_rows": int(n_malformed),
        "quarantined": int(n_q),
        "passive_excluded": int(ds.n_passive),
        "assigned": int(assigned),
        "metaorders": int(len(ms)),
        "snapshots": ds.snapshots,
    }
    omega = ms.filter_min_length(cfg.n_star)
    subsets = {f"omega_{cfg.n_star}": omega}
    for n in cfg.length_filters:
        subsets[f"omega_{n}"] = ms.filter_min_length(max(n, cfg.n_star))
    counts["omega"] = {k: int(len(v)) for k, v in subsets.items()}
    report = RunReport(counts)
    if len(ds.quarantined):
        reasons = ds.quarantined["reason"].value_counts().sort_index().to_dict()
        report.warnings.append({"kind": "quarantined_fills", "by_reason": reasons})
    if n_malformed:
        report.warnings.append({"kind": "malformed_rows", "count": int(n_malformed)})
    if ds.snapshots["skipped"]:
        report.warnings.append({"kind": "skipped_snapshots", "count": ds.snapshots["skipped"]})
    if ds.snapshots["frozen"]:
        report.warnings.append({"kind": "frozen_curvature_snapshots", "count": ds.snapshots["frozen"]})

    def stage(name, fn):
        try:
            report.analyses[name] = fn()
        except OptImpactError as exc:
            report.analyses[name] = {"status": "insufficient_data", "reason": str(exc)}
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            report.errors[name] = f"{type(exc).__name__}: {exc}"

    if "stitch" in stages:
        report.tables["metaorders"] = ms.summary.drop(columns=["start", "stop"]).assign(
            rate=_rates(ms.summary, ds.market_V))

    if "histograms" in stages:
        def hist():
            s = omega.summary
            rates = _rates(s, ds.market_V)
            report.tables["hist_duration"] = _histogram(s["duration_s"], cfg.histogram_bins, True)
            report.tables["hist_participation"] = _histogram(rates, cfg.histogram_bins, True)
            report.tables["hist_length"] = _histogram(s["n"], cfg.histogram_bins, False)
            return {"status": "ok" if len(s) else "empty", "n_metaorders": int(len(s))}
        stage("histograms", hist)

    if "impact" in stages:
        def curves():
            out, tabs = {}, []
            for label, sub in subsets.items():
                if len(sub) == 0:
                    out[label] = {"status": "empty"}
                    continue
                rec = {}
                for unit, scale in (("parameter", None), ("sigma", ds.sigma)):
                    try:
                        c = impact_curve(sub, ds.series, cfg.curve_buckets, cfg.samples,
                                         cfg.pre_trade_reference, scale)
                    except OptImpactError as exc:
                        rec[unit] = {"status": "insufficient_data", "reason": str(exc)}
                        continue
                    rec[unit] = _curve_record(c)
                    tabs.append(c.buckets.assign(subset=label, unit=unit))
                out[label] = rec
            if tabs:
                report.tables["curves"] = pd.concat(tabs, ignore_index=True)[
                    ["subset", "unit", "phase", "x", "y", "count", "se"]]
            return out
        stage("impact", curves)

    if "dispersion" in stages:
        def disp():
            if len(omega) == 0:
                return {"status": "empty"}
            b = impact_vs_dispersion(omega, ds.series, cfg.dispersion_buckets, cfg.pre_trade_reference)
            report.tables["dispersion"] = b
            from scipy.stats import spearmanr
            rho = spearmanr(b["x"], b["y"]).statistic if len(b) > 2 else math.nan
            return {"n_buckets": int(len(b)), "spearman": float(rho)}
        stage("dispersion", disp)

    if "sqrtlaw" in stages:
        def sqrt():
            if len(omega) == 0:
                return {"status": "empty"}
            fit = sqrt_law_fit(omega, ds.series, ds.market_V, ds.sigma, cfg.fit_buckets,
                               pre_trade=cfg.pre_trade_reference)
            report.tables["sqrtlaw"] = fit.buckets
            rec = {"exponent": fit.exponent, "prefactor": fit.prefactor, "r_squared": fit.r_squared,
                   "n_points": fit.n_points, "stable": fit.stable}
            if cfg.raw_fit:
                raw = sqrt_law_fit(omega, ds.series, ds.market_V, ds.sigma, cfg.fit_buckets,
                                   bucketed=False, pre_trade=cfg.pre_trade_reference)
                rec["raw"] = {"exponent": raw.exponent, "prefactor": raw.prefactor,
                              "r_squared": raw.r_squared, "n_points": raw.n_points}
            return rec
        stage("sqrtlaw", sqrt)

    if "fairpricing" in stages:
        def fair():
            if len(omega) == 0:
                return {"status": "empty"}
            theta = fair_pricing_points(omega, ds.series, cfg.calendar, cfg.fair_buckets,
                                        cfg.pre_trade_reference)
            keep = ds.portfolio["metaorder_id"].isin(set(omega.ids))
            pts = ds.portfolio[keep].reset_index(drop=True)
            port = _fit(pts, cfg.fair_buckets, int(len(omega) - len(pts)), SELL_CONVENTION)
            report.tables["fair_theta"] = theta.points
            report.tables["fair_portfolio"] = port.points
            if theta.buckets is not None:
                report.tables["fair_theta_buckets"] = theta.buckets
            if port.buckets is not None:
                report.tables["fair_portfolio_buckets"] = port.buckets
            rec = {"theta": _fair_record(theta), "portfolio": _fair_record(port)}
            if len(theta.points) >= 2:
                sc = scatter_by_size(theta.points)
                report.tables["fair_theta_scatter"] = sc
            return rec
        stage("fairpricing", fair)
    return report


def _rates(summary: pd.DataFrame, market_V: dict) -> np.ndarray:
    keys = zip(summary["underlying_id"].to_numpy(), summary["day"].to_numpy().astype(int).tolist())
    mv = np.array([market_V.get(k, np.nan) for k in keys], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return summary["abs_V"].to_numpy(float) / mv


TABLE_FILES = {
    "metaorders": "metaorders.csv", "curves": "impact_curves.csv", "dispersion": "dispersion.csv",
    "sqrtlaw": "sqrtlaw_buckets.csv", "fair_theta": "fair_pricing_theta.csv",
    "fair_portfolio": "fair_pricing_portfolio.csv", "fair_theta_buckets": "fair_pricing_theta_buckets.csv",
    "fair_portfolio_buckets": "fair_pricing_portfolio_buckets.csv",
    "fair_theta_scatter": "fair_pricing_theta_scatter.csv", "hist_duration": "hist_duration.csv",
    "hist_participation": "hist_participation.csv", "hist_length": "hist_length.csv",
    "slices": "slices.csv", "series": "series.csv",
}


def write_outputs(report: RunReport, outdir, config: Optional[PipelineConfig] = None) -> list:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for key, table in sorted(report.tables.items()):
        path = out / TABLE_FILES.get(key, f"{key}.csv")
        write_csv(table, path)
        written.append(path.name)
    doc = report.to_dict()
    doc["files"] = sorted(written)
    if config is not None:
        doc["config"] = {k: v for k, v in dataclasses.asdict(config).items()
                         if k not in ("trades", "quotes", "output_dir", "workers")}
    write_json(doc, out / "report.json")
    return written


def run_pipeline(cfg: PipelineConfig, stages=ALL_STAGES, write: bool = True) -> RunReport:
    """Load the configured CSV files, analyse them and write the result files."""
    if stages == ("calibrate",):
        return run_calibration(cfg, write)
    cfg.check_paths()
    trades, bad_t = read_trades(cfg.trades)
    quotes, bad_q = read_quotes(cfg.quotes)
    ds = build_dataset(trades, quotes, cfg, keep_slices="calibrate" in stages)
    report = analyse(ds, cfg, stages, n_ingested=len(trades) + len(bad_t), n_malformed=len(bad_t))
    if len(bad_q):
        report.warnings.append({"kind": "malformed_quote_rows", "count": int(len(bad_q))})
    if "calibrate" in stages and ds.slices is not None:
        report.tables["slices"] = ds.slices
        report.tables["series"] = series_table(ds.series)
        report.analyses["calibrate"] = {"snapshots": ds.snapshots,
                                        "series_points": {u: len(s) for u, s in ds.series.items()}}
    if write:
        write_outputs(report, cfg.output_dir, cfg)
    return report


def dataset_from_frames(days: Iterable, cfg: PipelineConfig, keep_slices: bool = False) -> Dataset:
    """Build a dataset from in-memory ``(day, quotes, trades)`` triples, one day at a time."""
    from .metaorder import normalise_fills
    results = []
    for day, quotes, trades in days:
        if "is_call" not in quotes:
            quotes = quotes.assign(is_call=quotes["kind"].eq("C"))
        results.append(process_day(int(day), quotes, normalise_fills(trades), cfg, keep_slices))
    return merge_days(results, cfg.parameter)


def series_table(series: dict) -> pd.DataFrame:
    parts = [pd.DataFrame({"underlying_id": und, "time": s.times, "value": s.values,
                           "forward": s.forwards if s.forwards is not None else np.nan})
             for und, s in sorted(series.items())]
    if not parts:
        return pd.DataFrame(columns=["underlying_id", "time", "value", "forward"])
    return pd.concat(parts, ignore_index=True)


def run_calibration(cfg: PipelineConfig, write: bool = True) -> RunReport:
    """Calibrate every quote snapshot and emit slices plus the parameter series."""
    cfg.check_paths(("quotes",))
    quotes, bad_q = read_quotes(cfg.quotes)
    cal = cfg.calendar
    results = [process_day(d, q, _empty_trades(), cfg, keep_slices=True)
               for d, q in sorted(split_by_day(quotes, "snapshot_time", cal).items())]
    ds = merge_days(results, cfg.parameter)
    report = RunReport({"orders_ingested": 0, "malformed_rows": 0, "quarantined": 0,
                        "passive_excluded": 0, "assigned": 0, "metaorders": 0,
                        "snapshots": ds.snapshots, "quote_rows": int(len(quotes) + len(bad_q))})
    if len(bad_q):
        report.warnings.append({"kind": "malformed_quote_rows", "count": int(len(bad_q))})
    if ds.snapshots["skipped"]:
        report.warnings.append({"kind": "skipped_snapshots", "count": ds.snapshots["skipped"]})
    if ds.slices is not None:
        report.tables["slices"] = ds.slices
    report.tables["series"] = series_table(ds.series)
    report.analyses["calibrate"] = {"snapshots": ds.snapshots,
                                    "series_points": {u: len(s) for u, s in ds.series.items()}}
    if write:
        write_outputs(report, cfg.output_dir, cfg)
    return report


def _empty_trades() -> pd.DataFrame:
    from .metaorder import FILL_COLUMNS, normalise_fills
    return normalise_fills(pd.DataFrame({c: pd.Series(dtype=object) for c in FILL_COLUMNS}))
