"""CSV ingestion and deterministic CSV/JSON writers.

Trades: ``timestamp,agent_id,underlying_id,option_id,kind,strike,expiry,side,quantity,price,aggressive``
Quotes: ``snapshot_time,underlying_id,expiry,strike,kind,mid,forward`` (forward may be empty
or absent; an optional ``discount`` column is honoured).

Timestamps are ISO-8601 UTC with millisecond precision. Rows that fail
validation are quarantined with their 1-based file line number instead
of aborting the load.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import SchemaError
from .metaorder import FILL_COLUMNS, normalise_fills
from .pricing import OptionSpec
from .volsurface import QUOTE_COLUMNS, Quote, QuoteSnapshot

TRADE_COLUMNS = FILL_COLUMNS
QUOTE_REQUIRED = [c for c in QUOTE_COLUMNS if c != "forward"]


def _read_raw(path, required) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path} has no header") from None
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing columns {missing}")
    raw["line"] = np.arange(2, len(raw) + 2)
    return raw


def parse_times(values: pd.Series) -> np.ndarray:
    """ISO-8601 strings to epoch ms; unparseable entries become INT64 min."""
    ts = pd.to_datetime(values.str.strip(), utc=True, errors="coerce", format="ISO8601")
    out = np.full(len(values), np.iinfo(np.int64).min, dtype=np.int64)
    ok = ts.notna().to_numpy()
    out[ok] = ts[ok].dt.tz_convert(None).to_numpy().astype("datetime64[ms]").astype(np.int64)
    return out


def format_times(ms) -> np.ndarray:
    ms = np.asarray(ms, dtype=np.int64)
    base = pd.to_datetime(ms, unit="ms", utc=True).strftime("%Y-%m-%dT%H:%M:%S").to_numpy()
    frac = np.char.zfill((ms % 1000).astype(str), 3)
    return np.char.add(np.char.add(base.astype(str), "."), np.char.add(frac, "Z"))


def _to_float(text: str) -> float:
    try:
        return float(text) if text else math.nan
    except ValueError:
        return math.nan


def _num(values: pd.Series) -> np.ndarray:
    # Python's float() parses the shortest repr back exactly; blanks and junk become NaN
    return np.fromiter((_to_float(v.strip()) for v in values), dtype=float, count=len(values))


def _quarantine(raw, bad_reasons: dict) -> pd.DataFrame:
    rows = []
    for reason, mask in bad_reasons.items():
        for line in raw["line"].to_numpy()[mask]:
            rows.append({"line": int(line), "reason": reason})
    q = pd.DataFrame(rows, columns=["line", "reason"])
    return q.drop_duplicates("line").sort_values("line").reset_index(drop=True)


def read_trades(path):
    """Load a trades CSV; returns ``(fills, quarantined)`` with fills sorted by time."""
    raw = _read_raw(path, TRADE_COLUMNS)
    t = parse_times(raw["timestamp"])
    e = parse_times(raw["expiry"])
    side = raw["side"].str.strip().str.upper().map({"BUY": 1, "SELL": -1, "B": 1, "S": -1})
    kind = raw["kind"].str.strip().str.upper()
    aggr = raw["aggressive"].str.strip().map({"1": True, "0": False, "true": True, "false": False,
                                              "True": True, "False": False})
    qty, price, strike = _num(raw["quantity"]), _num(raw["price"]), _num(raw["strike"])
    bad = {
        "bad_timestamp": t == np.iinfo(np.int64).min,
        "bad_expiry": e == np.iinfo(np.int64).min,
        "bad_side": side.isna().to_numpy(),
        "bad_kind": ~kind.isin(["C", "P"]).to_numpy(),
        "bad_aggressive": aggr.isna().to_numpy(),
        "bad_quantity": ~(qty > 0),
        "bad_price": ~(price >= 0),
        "bad_strike": ~(strike > 0),
        "missing_id": ((raw["agent_id"].str.strip() == "") | (raw["underlying_id"].str.strip() == "")).to_numpy(),
    }
    any_bad = np.logical_or.reduce(list(bad.values())) if len(raw) else np.zeros(0, bool)
    good = ~any_bad
    df = pd.DataFrame({
        "timestamp": t[good], "agent_id": raw["agent_id"].str.strip().to_numpy()[good],
        "underlying_id": raw["underlying_id"].str.strip().to_numpy()[good],
        "option_id": raw["option_id"].str.strip().to_numpy()[good], "kind": kind.to_numpy()[good],
        "strike": strike[good], "expiry": e[good], "side": side.to_numpy()[good].astype(np.int64),
        "quantity": qty[good], "price": price[good],
        "aggressive": aggr.to_numpy()[good].astype(bool),
        "line": raw["line"].to_numpy()[good],
    })
    df = normalise_fills(df.sort_values(["timestamp", "line"], kind="stable").reset_index(drop=True))
    return df, _quarantine(raw, bad)


def read_quotes(path):
    """Load a quotes CSV; returns ``(quotes, quarantined)``."""
    raw = _read_raw(path, QUOTE_REQUIRED)
    t = parse_times(raw["snapshot_time"])
    e = parse_times(raw["expiry"])
    kind = raw["kind"].str.strip().str.upper()
    strike, mid = _num(raw["strike"]), _num(raw["mid"])
    fwd = _num(raw["forward"]) if "forward" in raw else np.full(len(raw), np.nan)
    disc = _num(raw["discount"]) if "discount" in raw else np.ones(len(raw))
    disc = np.where(np.isnan(disc), 1.0, disc)
    bad = {
        "bad_timestamp": t == np.iinfo(np.int64).min,
        "bad_expiry": e == np.iinfo(np.int64).min,
        "bad_kind": ~kind.isin(["C", "P"]).to_numpy(),
        "bad_strike": ~(strike > 0),
        "bad_mid": ~(mid >= 0),
        "bad_forward": ~(np.isnan(fwd) | (fwd > 0)),
        "bad_discount": ~((disc > 0) & (disc <= 1)),
        "missing_id": (raw["underlying_id"].str.strip() == "").to_numpy(),
    }
    any_bad = np.logical_or.reduce(list(bad.values())) if len(raw) else np.zeros(0, bool)
    good = ~any_bad
    df = pd.DataFrame({
        "snapshot_time": t[good], "underlying_id": raw["underlying_id"].str.strip().to_numpy()[good],
        "expiry": e[good], "strike": strike[good], "kind": kind.to_numpy()[good], "mid": mid[good],
        "forward": fwd[good], "discount": disc[good], "line": raw["line"].to_numpy()[good],
    })
    df["is_call"] = df["kind"].eq("C")
    return df, _quarantine(raw, bad)


def quotes_to_snapshots(quotes: pd.DataFrame) -> list:
    """Group quote rows by (underlying, snapshot_time, expiry) into snapshots."""
    snaps = []
    for (und, t, e), part in quotes.groupby(["underlying_id", "snapshot_time", "expiry"], sort=True):
        fwd = part["forward"].dropna()
        disc = float(part["discount"].iloc[0]) if "discount" in part else 1.0
        snaps.append(QuoteSnapshot(
            str(und), int(t), int(e),
            [Quote(OptionSpec(float(K), int(e), k), float(m))
             for K, k, m in zip(part["strike"], part["kind"], part["mid"])],
            forward=float(fwd.iloc[0]) if len(fwd) else None, discount=disc))
    return snaps


def fmt_float(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_csv(frame: pd.DataFrame, path) -> None:
    """Deterministic CSV: shortest round-trip float repr, '\\n' line endings."""
    out = pd.DataFrame(index=frame.index)
    for col in frame.columns:
        s = frame[col]
        if pd.api.types.is_float_dtype(s):
            out[col] = [fmt_float(v) for v in s.to_numpy()]
        elif pd.api.types.is_bool_dtype(s):
            out[col] = s.astype(int).astype(str)
        else:
            out[col] = s.astype(str)
    out.to_csv(path, index=False, lineterminator="\n")


def write_trades(trades: pd.DataFrame, path) -> None:
    df = pd.DataFrame({
        "timestamp": format_times(trades["timestamp"]),
        "agent_id": trades["agent_id"].astype(str), "underlying_id": trades["underlying_id"].astype(str),
        "option_id": trades["option_id"].astype(str), "kind": trades["kind"],
        "strike": trades["strike"].astype(float), "expiry": format_times(trades["expiry"]),
        "side": np.where(trades["side"].to_numpy() > 0, "BUY", "SELL"),
        "quantity": trades["quantity"].astype(float), "price": trades["price"].astype(float),
        "aggressive": trades["aggressive"].astype(bool),
    })
    write_csv(df, path)


def write_quotes(quotes: pd.DataFrame, path) -> None:
    df = pd.DataFrame({
        "snapshot_time": format_times(quotes["snapshot_time"]),
        "underlying_id": quotes["underlying_id"].astype(str),
        "expiry": format_times(quotes["expiry"]), "strike": quotes["strike"].astype(float),
        "kind": quotes["kind"], "mid": quotes["mid"].astype(float),
        "forward": quotes["forward"].astype(float),
    })
    write_csv(df, path)


def _json_safe(o):
    if isinstance(o, dict):
        return {str(k): _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else None
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(_json_safe(doc), sort_keys=True, indent=2) + "\n")
