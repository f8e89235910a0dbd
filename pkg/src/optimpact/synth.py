"""Synthetic options market with known, embedded parameter impact.

Each simulated day is generated independently from ``(seed, day)``:

* the smile parameters follow ``base + W_t + sum of metaorder impacts``
  where ``W`` is a driftless random walk restarted every morning;
* agents execute metaorders one after another with alternating signs,
  so the stitcher recovers exactly the planned metaorders;
* during execution a metaorder pushes the traded parameter by
  ``eps * Y * g * sigma * (rate * s)**delta`` (``s`` its executed fraction
  of sensitivity, ``g`` a strike-dispersion factor) and afterwards relaxes
  convexly to ``rho`` times its peak;
* quotes and fills are priced off the instantaneous true smile.

The state is piecewise constant between snapshot times and includes
every fill at or before the snapshot. Because fills feed back into the
smile through vega, sensitivities, rates and impacts are solved by a
fixed-point iteration.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from ._validation import PARAMETERS, check_parameter
from .calendar import MS_PER_DAY, MS_PER_YEAR, VenueCalendar
from .exceptions import ConfigError, ReconciliationError, SynthError
from .metaorder import weighted_dispersion
from .pricing import black_price, black_vega

DECAY_RATE = math.log(100.0)  # relaxation has covered 99% of its way at the horizon
MAX_FIXED_POINT_ITER = 50
FIXED_POINT_TOL = 1e-13


@dataclass
class ImpactModel:
    prefactor: float = 1.0
    exponent: float = 0.5
    relaxation_ratio: float = 2.0 / 3.0
    decay_horizon: float = 1.0  # in multiples of the metaorder duration
    fair_pricing: bool = False  # relaxation level = S-weighted average of the execution path
    dispersion_scale: Optional[float] = 0.05  # None disables the dispersion factor
    sigma: Optional[float] = None  # impact scale; None uses the day's noise std


@dataclass
class AgentModel:
    n_agents: int = 20
    metaorders_per_day: int = 240
    short_fraction: float = 0.1
    length_p: float = 0.3  # mean length about 7 fills
    min_interval_ms: int = 100
    mean_interval_ms: float = 3000.0
    size_range: tuple = (1.0, 100.0)  # per-fill size scale, ATM-contract equivalents
    size_length_exponent: float = 1.0  # parent size grows as N**a; 1 = fill size independent of N
    vol_spread_max: float = 0.06
    skew_leg_range: tuple = (0.03, 0.15)


@dataclass
class SynthConfig:
    seed: int = 0
    n_days: int = 5
    first_day: str = "2024-01-02"
    parameter: str = "atmf_vol"
    underlying_id: str = "IDX"
    calendar: VenueCalendar = field(default_factory=lambda: VenueCalendar(0, "00:00", "06:30"))
    snapshot_interval_s: int = 60
    forward0: float = 300.0
    forward_vol: float = 0.15
    smile: tuple = (0.2, -0.1, 0.3)
    noise: dict = field(default_factory=lambda: {"atmf_vol": 0.01, "atmf_skew": 0.02})
    impact: ImpactModel = field(default_factory=ImpactModel)
    agents: AgentModel = field(default_factory=AgentModel)
    background_fills_per_day: int = 2000
    background_size: float = 1.0
    background_spread: float = 0.1
    tick_size: float = 0.0
    strike_step: float = 2.5
    quote_moneyness: tuple = (-0.15, -0.075, 0.0, 0.075, 0.15)
    expiry_days: int = 30
    relaxation_samples: int = 20
    emit_forward: bool = True
    keep_paths: bool = False

    def __post_init__(self):
        check_parameter(self.parameter)
        im, am = self.impact, self.agents
        if not 0 < im.exponent <= 1:
            raise ConfigError("impact exponent must lie in (0, 1]")
        if not 0 <= im.relaxation_ratio <= 1:
            raise ConfigError("relaxation ratio must lie in [0, 1]")
        if im.prefactor < 0 or im.decay_horizon <= 0:
            raise ConfigError("impact prefactor must be >= 0 and decay horizon > 0")
        if im.dispersion_scale is not None and im.dispersion_scale <= 0:
            raise ConfigError("dispersion scale must be > 0")
        if self.n_days < 1 or am.n_agents < 1 or am.metaorders_per_day < 0:
            raise ConfigError("n_days and n_agents must be >= 1")
        if not 0 < am.length_p <= 1 or not 0 <= am.short_fraction <= 1:
            raise ConfigError("length distribution parameters out of range")
        if am.min_interval_ms < 1 or am.mean_interval_ms < 0:
            raise ConfigError("fill intervals must be positive")
        if self.background_fills_per_day < 0 or self.forward0 <= 0 or self.forward_vol < 0:
            raise ConfigError("background rate, forward and forward vol must be nonnegative")
        if any(v < 0 for v in self.noise.values()) or set(self.noise) - set(PARAMETERS):
            raise ConfigError("noise must map smile parameters to nonnegative daily stds")
        if self.snapshot_interval_s < 1 or self.relaxation_samples < 1 or self.strike_step <= 0:
            raise ConfigError("snapshot interval, relaxation samples and strike step must be positive")
        if len(self.quote_moneyness) < 3:
            raise ConfigError("need at least three quoted strikes")

    @property
    def first_day_index(self) -> int:
        return VenueCalendar.day_from_label(self.first_day)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["calendar"] = dataclasses.asdict(self.calendar)
        return d


@dataclass
class DayOutput:
    day: int
    trades: pd.DataFrame
    quotes: pd.DataFrame
    metaorders: pd.DataFrame
    summary: dict
    paths: Optional[pd.DataFrame] = None


@dataclass
class GroundTruthLedger:
    config: dict
    metaorders: pd.DataFrame
    days: pd.DataFrame
    paths: Optional[pd.DataFrame] = None

    @property
    def exponent(self) -> float:
        return float(self.config["impact"]["exponent"])

    @property
    def relaxation_ratio(self) -> float:
        if self.config["impact"]["fair_pricing"]:
            m = self.metaorders
            return float(m["permanent"].sum() / m["peak"].sum()) if len(m) else math.nan
        return float(self.config["impact"]["relaxation_ratio"])

    def to_json(self) -> str:
        doc = {"config": self.config,
               "metaorders": self.metaorders.to_dict(orient="list"),
               "days": self.days.to_dict(orient="list")}
        if self.paths is not None:
            doc["paths"] = self.paths.to_dict(orient="list")
        return json.dumps(doc, sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthLedger":
        doc = json.loads(text)
        paths = pd.DataFrame(doc["paths"]) if "paths" in doc else None
        return cls(doc["config"], pd.DataFrame(doc["metaorders"]), pd.DataFrame(doc["days"]), paths)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


@dataclass
class SynthResult:
    trades: pd.DataFrame
    quotes: pd.DataFrame
    ledger: GroundTruthLedger

    def write(self, outdir) -> dict:
        from .io import write_quotes, write_trades

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"trades": out / "trades.csv", "quotes": out / "quotes.csv",
                 "ledger": out / "ledger.json"}
        write_trades(self.trades, paths["trades"])
        write_quotes(self.quotes, paths["quotes"])
        paths["ledger"].write_text(self.ledger.to_json())
        return paths


def _snap_strikes(F, k, step):
    return np.maximum(step * np.round(F * np.exp(k) / step), step)


def _draw_lengths(rng, am: AgentModel, n: int) -> np.ndarray:
    short = rng.random(n) < am.short_fraction
    return np.where(short, rng.integers(2, 5, n), 4 + rng.geometric(am.length_p, n))


def _relax_shape(x):
    """Convex decay from 1 at x=0 to 0 at x=1."""
    x = np.clip(x, 0.0, 1.0)
    return (np.exp(-DECAY_RATE * x) - math.exp(-DECAY_RATE)) / (1.0 - math.exp(-DECAY_RATE))


def _impact_path(snap, fill_t, eta, first, t_end, T, peak, rho_m, horizon):
    """Sum of all metaorder impact paths on the snapshot grid."""
    n_m = len(first)
    prev = np.r_[0.0, eta[:-1]]
    prev[first] = 0.0
    boundary = t_end + np.ceil(horizon * T).astype(np.int64)
    ev_t = np.r_[fill_t, boundary]
    ev_v = np.r_[eta - prev, (rho_m - 1.0) * peak]
    order = np.argsort(ev_t, kind="stable")
    cum = np.cumsum(ev_v[order])
    pos = np.searchsorted(ev_t[order], snap, side="right") - 1
    path = np.where(pos >= 0, cum[np.maximum(pos, 0)], 0.0)
    lo = np.searchsorted(snap, t_end, side="right")
    hi = np.searchsorted(snap, boundary, side="left")
    cnt = np.maximum(hi - lo, 0)
    if cnt.sum():
        m = np.repeat(np.arange(n_m), cnt)
        idx = np.repeat(lo, cnt) + (np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt))
        x = (snap[idx] - t_end[m]) / (horizon * T[m])
        np.add.at(path, idx, peak[m] * (1.0 - rho_m[m]) * (_relax_shape(x) - 1.0))
    return path


def simulate_day(cfg: SynthConfig, day_offset: int) -> DayOutput:
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(day_offset)]))
    day = cfg.first_day_index + day_offset
    open_, close = (int(v) for v in cfg.calendar.session_bounds(day))
    L = close - open_
    expiry = close + cfg.expiry_days * MS_PER_DAY
    am, im, param = cfg.agents, cfg.impact, cfg.parameter
    step = cfg.strike_step
    label = VenueCalendar.day_label(day)

    # --- schedule: per agent, sequential metaorders with alternating signs
    M = am.metaorders_per_day
    counts = np.full(am.n_agents, M // am.n_agents)
    counts[rng.permutation(am.n_agents)[:M % am.n_agents]] += 1
    span_factor = max(1.0, im.decay_horizon)
    plan = []
    for a in range(am.n_agents):
        n_m = int(counts[a])
        if n_m == 0:
            continue
        lengths = _draw_lengths(rng, am, n_m)
        gaps_ms = [np.round(am.min_interval_ms + rng.exponential(am.mean_interval_ms, n - 1)
                            ).astype(np.int64) for n in lengths]
        dur = np.array([g.sum() for g in gaps_ms], dtype=np.int64)
        T = np.maximum(dur, 1)
        spans = dur + np.ceil(span_factor * T).astype(np.int64) + 1
        slack = L - 2 - int(spans.sum())
        if slack < 0:
            raise SynthError(f"agent schedule of {n_m} metaorders does not fit in the session")
        waits = np.floor(rng.dirichlet(np.ones(n_m + 1)) * slack).astype(np.int64)
        t = open_ + 1
        sign = int(rng.choice([-1, 1]))
        for j in range(n_m):
            t += int(waits[j])
            plan.append((a, j, sign, t + np.r_[0, np.cumsum(gaps_ms[j])]))
            t += int(spans[j])
            sign = -sign
    plan.sort(key=lambda p: (p[0], p[1]))
    n_mo = len(plan)
    n_fill = np.array([len(p[3]) for p in plan], dtype=np.int64)
    first = (np.cumsum(n_fill) - n_fill).astype(np.int64)
    fill_t = np.concatenate([p[3] for p in plan]) if n_mo else np.zeros(0, np.int64)
    owner = np.repeat(np.arange(n_mo), n_fill)
    eps = np.array([p[2] for p in plan], dtype=np.int64)
    t0 = fill_t[first] if n_mo else np.zeros(0, np.int64)
    t_end = fill_t[first + n_fill - 1] if n_mo else np.zeros(0, np.int64)
    T = np.maximum(t_end - t0, 1)

    # --- snapshot grid: regular grid, every metaorder fill, pre-trade instants, relaxation samples
    grid = open_ + np.arange(0, L + 1, cfg.snapshot_interval_s * 1000, dtype=np.int64)
    j = np.arange(1, cfg.relaxation_samples + 1, dtype=np.int64)
    rel_t = (t_end[:, None] + (j[None, :] * T[:, None]) // cfg.relaxation_samples).ravel()
    snap = np.unique(np.r_[grid, fill_t, t0 - 1, rel_t])
    snap = snap[(snap >= open_) & (snap <= close)]

    # --- exogenous paths
    frac = np.diff(snap) / L
    W = {}
    for p in PARAMETERS:
        nu = float(cfg.noise.get(p, 0.0))
        W[p] = np.r_[0.0, np.cumsum(nu * np.sqrt(frac) * rng.standard_normal(len(frac)))]
    dt_y = np.diff(snap) / MS_PER_YEAR
    fv = cfg.forward_vol
    logF = np.r_[0.0, np.cumsum(fv * np.sqrt(dt_y) * rng.standard_normal(len(dt_y)) - 0.5 * fv * fv * dt_y)]
    F = cfg.forward0 * np.exp(logF)
    base = {"atmf_vol": cfg.smile[0], "atmf_skew": cfg.smile[1]}
    curv = cfg.smile[2]
    gidx = np.searchsorted(snap, grid)
    noise_only = base[param] + W[param]
    if im.sigma is not None:
        sigma = float(im.sigma)
    else:
        sigma = float(np.std(noise_only[gidx], ddof=1))
    if im.prefactor > 0 and n_mo and not sigma > 0:
        raise SynthError("impact scale is zero: set impact.sigma or a positive noise level")

    # --- metaorder fills: strikes, sides, sizes
    fidx_m = np.searchsorted(snap, fill_t, side="right") - 1
    F_m = F[fidx_m]
    size_c = np.exp(rng.uniform(*np.log(am.size_range), n_mo)) * n_fill ** (am.size_length_exponent - 1.0)
    q_m = size_c[owner] * rng.exponential(1.0, len(fill_t))
    if param == "atmf_vol":
        spread = rng.uniform(0.0, am.vol_spread_max, n_mo)
        k_plan = rng.standard_normal(len(fill_t)) * spread[owner]
        K_m = _snap_strikes(F_m, k_plan, step)
        call_m = K_m >= F_m
        side_m = eps[owner].copy()
    else:
        leg_a = rng.uniform(*am.skew_leg_range, n_mo)
        start_leg = rng.choice([-1, 1], n_mo)
        pos_in = np.arange(len(fill_t)) - first[owner]
        leg = start_leg[owner] * np.where(pos_in % 2 == 0, 1, -1)
        k_plan = leg * leg_a[owner] * np.exp(0.1 * rng.standard_normal(len(fill_t)))
        K_m = _snap_strikes(F_m, k_plan, step)
        above = step * (np.floor(F_m / step) + 1)
        below = step * (np.ceil(F_m / step) - 1)
        K_m = np.where((leg > 0) & ~(K_m > F_m), above, K_m)
        K_m = np.where((leg < 0) & ~(K_m < F_m), below, K_m)
        if np.any(K_m <= 0):
            raise SynthError("strike grid too coarse for the skew legs")
        call_m = np.ones(len(fill_t), bool)
        side_m = eps[owner] * leg

    # --- background (passive) flow
    n_bg = int(cfg.background_fills_per_day)
    bg_t = np.sort(rng.integers(open_, close + 1, n_bg))
    fidx_b = np.searchsorted(snap, bg_t, side="right") - 1
    F_b = F[fidx_b]
    K_b = _snap_strikes(F_b, cfg.background_spread * rng.standard_normal(n_bg), step)
    call_b = K_b >= F_b
    side_b = rng.choice([-1, 1], n_bg)
    q_b = cfg.background_size * rng.exponential(1.0, n_bg)

    t_f = np.r_[fill_t, bg_t]
    fidx = np.r_[fidx_m, fidx_b]
    K = np.r_[K_m, K_b]
    side = np.r_[side_m, side_b].astype(np.int64)
    is_call = np.r_[call_m, call_b]
    Ff = F[fidx]
    kf = np.log(K / Ff)
    tau_f = (expiry - t_f) / MS_PER_YEAR
    dsig = np.ones_like(kf) if param == "atmf_vol" else kf
    base_vol = base["atmf_vol"] + base["atmf_skew"] * kf + curv * kf * kf
    if np.any(base_vol <= 0):
        raise SynthError("base smile is not positive at the traded strikes")
    atm_vega = black_vega(Ff, Ff, tau_f, base["atmf_vol"])
    unit = black_vega(Ff, K, tau_f, base_vol) * np.maximum(np.abs(dsig), 0.01)
    Q = np.maximum(1.0, np.round(np.r_[q_m, q_b] * atm_vega / unit))
    nm_fill = len(fill_t)

    # --- fixed point: sensitivities <-> impact path
    impact = np.zeros(len(snap))
    S_prev = None
    for _ in range(MAX_FIXED_POINT_ITER):
        a_t = base["atmf_vol"] + W["atmf_vol"] + (impact if param == "atmf_vol" else 0.0)
        b_t = base["atmf_skew"] + W["atmf_skew"] + (impact if param == "atmf_skew" else 0.0)
        vol_f = a_t[fidx] + b_t[fidx] * kf + curv * kf * kf
        if np.any(vol_f <= 0):
            raise SynthError("smile vol turned non-positive at a traded strike")
        S = side * Q * black_vega(Ff, K, tau_f, vol_f) * dsig
        V_day = float(np.abs(S).sum())
        Sm = S[:nm_fill]
        if n_mo:
            Vm = np.add.reduceat(Sm, first)
            rate = np.abs(Vm) / V_day
            cum = np.cumsum(Sm)
            s_frac = np.clip((cum - np.repeat(cum[first] - Sm[first], n_fill)) / Vm[owner], 0.0, None)
            disp = weighted_dispersion(K_m / F_m, Sm, first)
            if im.dispersion_scale is None:
                g = np.ones(n_mo)
            elif param == "atmf_vol":
                g = np.exp(-np.nan_to_num(disp) / im.dispersion_scale)
            else:
                g = 1.0 - np.exp(-np.nan_to_num(disp) / im.dispersion_scale)
            amp = eps * im.prefactor * g * sigma
            eta = amp[owner] * (rate[owner] * s_frac) ** im.exponent
            peak = eta[first + n_fill - 1]
            if im.fair_pricing:
                rho_m = np.add.reduceat(Sm / Vm[owner] * s_frac ** im.exponent, first)
            else:
                rho_m = np.full(n_mo, im.relaxation_ratio)
            impact = _impact_path(snap, fill_t, eta, first, t_end, T, peak, rho_m,
                                  im.decay_horizon)
        if S_prev is not None and np.max(np.abs(S - S_prev)) <= FIXED_POINT_TOL * np.max(np.abs(S)):
            break
        S_prev = S
    else:
        raise SynthError("sensitivity/impact fixed point did not converge")

    a_t = base["atmf_vol"] + W["atmf_vol"] + (impact if param == "atmf_vol" else 0.0)
    b_t = base["atmf_skew"] + W["atmf_skew"] + (impact if param == "atmf_skew" else 0.0)
    if n_mo and np.any(eps[owner] * S[:nm_fill] < 0):
        raise SynthError("a planned metaorder fill has the wrong sensitivity sign")

    # --- fills
    vol_f = a_t[fidx] + b_t[fidx] * kf + curv * kf * kf
    price = black_price(Ff, K, tau_f, vol_f, 1.0, is_call)
    agent = np.r_[np.array([f"A{p[0]:03d}" for p in plan], dtype=object)[owner],
                  np.full(n_bg, "MKT", dtype=object)]
    und = cfg.underlying_id
    exp_label = VenueCalendar.day_label(int(cfg.calendar.day_of(expiry)))
    kind = np.where(is_call, "C", "P")
    trades = pd.DataFrame({
        "timestamp": t_f, "agent_id": agent, "underlying_id": und,
        "option_id": [f"{und}-{exp_label}-{c}-{k:g}" for c, k in zip(kind, K)],
        "kind": kind, "strike": K, "expiry": np.int64(expiry), "side": side, "quantity": Q,
        "price": _round_tick(price, cfg.tick_size),
        "aggressive": np.r_[np.ones(nm_fill, bool), np.zeros(n_bg, bool)],
    })
    trades = trades.sort_values("timestamp", kind="stable").reset_index(drop=True)

    # --- quotes
    mk = np.asarray(cfg.quote_moneyness, float)
    qt = np.repeat(snap, len(mk))
    qF = np.repeat(F, len(mk))
    qK = _snap_strikes(qF, np.tile(mk, len(snap)), step)
    qk = np.log(qK / qF)
    qvol = np.repeat(a_t, len(mk)) + np.repeat(b_t, len(mk)) * qk + curv * qk * qk
    if np.any(qvol <= 0):
        raise SynthError("smile vol turned non-positive at a quoted strike")
    qcall = qK >= qF
    qmid = black_price(qF, qK, (expiry - qt) / MS_PER_YEAR, qvol, 1.0, qcall)
    quotes = pd.DataFrame({
        "snapshot_time": qt, "underlying_id": und, "expiry": np.int64(expiry), "strike": qK,
        "kind": np.where(qcall, "C", "P"), "mid": _round_tick(qmid, cfg.tick_size),
        "forward": qF if cfg.emit_forward else np.nan,
    }).drop_duplicates(["snapshot_time", "strike"]).reset_index(drop=True)

    # --- ledger
    if n_mo:
        mo = pd.DataFrame({
            "metaorder_id": [f"{und}/A{p[0]:03d}/{label}/{p[1]:04d}" for p in plan],
            "agent_id": [f"A{p[0]:03d}" for p in plan], "underlying_id": und, "day": day,
            "sign": eps, "n": n_fill, "t0": t0, "t_end": t_end, "duration_ms": T, "V": Vm,
            "rate": rate, "dispersion": disp, "g": g, "peak": peak, "rho": rho_m,
            "permanent": rho_m * peak, "sigma": sigma,
        })
    else:
        mo = pd.DataFrame(columns=["metaorder_id", "agent_id", "underlying_id", "day", "sign", "n",
                                   "t0", "t_end", "duration_ms", "V", "rate", "dispersion", "g",
                                   "peak", "rho", "permanent", "sigma"])
    summary = {"day": day, "label": label, "V_day": V_day, "sigma": sigma,
               "n_metaorders": n_mo, "n_fills": int(len(t_f)), "n_background": n_bg,
               "n_snapshots": int(len(snap))}
    paths = None
    if cfg.keep_paths:
        paths = pd.DataFrame({"time": snap, "forward": F, "atmf_vol": a_t, "atmf_skew": b_t,
                              "noise_only": noise_only, "impact": impact})
    return DayOutput(day, trades, quotes, mo, summary, paths)


def _round_tick(p, tick):
    if not tick:
        return p
    return np.maximum(np.round(p / tick) * tick, tick)


def simulate_days(cfg: SynthConfig) -> Iterator[DayOutput]:
    for d in range(cfg.n_days):
        yield simulate_day(cfg, d)


def simulate(cfg: SynthConfig) -> SynthResult:
    days = list(simulate_days(cfg))
    trades = pd.concat([d.trades for d in days], ignore_index=True)
    quotes = pd.concat([d.quotes for d in days], ignore_index=True)
    mos = pd.concat([d.metaorders for d in days if len(d.metaorders)], ignore_index=True) \
        if any(len(d.metaorders) for d in days) else days[0].metaorders
    ledger = GroundTruthLedger(cfg.to_dict(), mos, pd.DataFrame([d.summary for d in days]),
                               pd.concat([d.paths.assign(day=d.day) for d in days], ignore_index=True)
                               if cfg.keep_paths else None)
    return SynthResult(trades, quotes, ledger)


def ledger_check(ledger: GroundTruthLedger, estimates: dict, rate_tol: float = 1e-6) -> pd.DataFrame:
    """Compare pipeline estimates with the simulator's truth.

    ``estimates`` may hold ``exponent``, ``relaxation_ratio``,
    ``fair_slope`` and ``portfolio_slope`` scalars (the slopes are compared
    only when the simulation embedded fair pricing), and ``metaorders``, a
    frame of ``metaorder_id`` and ``rate`` that must reconcile one to one
    with the ledger.
    """
    per = estimates.get("metaorders")
    if per is not None:
        truth = ledger.metaorders.set_index("metaorder_id")
        if per["metaorder_id"].duplicated().any():
            raise ReconciliationError("duplicate metaorder ids in the estimates")
        unknown = ~per["metaorder_id"].isin(truth.index)
        if unknown.any():
            raise ReconciliationError(
                f"{int(unknown.sum())} estimated metaorders are not in the ledger, "
                f"e.g. {per['metaorder_id'][unknown].iloc[0]!r}")
        if "rate" in per:
            true_rate = truth.loc[per["metaorder_id"], "rate"].to_numpy()
            err = np.abs(per["rate"].to_numpy() - true_rate) / true_rate
            if np.any(err > rate_tol):
                bad = per["metaorder_id"].to_numpy()[np.argmax(err)]
                raise ReconciliationError(f"participation of {bad!r} disagrees with the ledger")
    truth_values = {"exponent": ledger.exponent, "relaxation_ratio": ledger.relaxation_ratio}
    if ledger.config["impact"]["fair_pricing"]:
        # only a fair-pricing simulation has a known regression slope
        truth_values.update(fair_slope=1.0, portfolio_slope=1.0)
    rows = []
    for name, true in truth_values.items():
        if name not in estimates or estimates[name] is None:
            continue
        est = float(estimates[name])
        rows.append({"quantity": name, "estimate": est, "truth": true,
                     "abs_error": abs(est - true),
                     "rel_error": abs(est - true) / abs(true) if true else math.nan})
    return pd.DataFrame(rows, columns=["quantity", "estimate", "truth", "abs_error", "rel_error"])
