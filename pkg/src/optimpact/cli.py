"""Command-line entry point.

Every subcommand that analyses market data accepts ``--config FILE`` (INI
with a ``[pipeline]`` section) and a flag per config field; flags win
over the file. Exit status: 0 success, 1 usage or config error, 2 input
schema error, 3 analysis error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, SchemaError
from .pipeline import ALL_STAGES, PipelineConfig, load_config, run_pipeline

log = logging.getLogger("optimpact")

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_ANALYSIS = 0, 1, 2, 3

STAGES = {
    "calibrate": ("calibrate",),
    "stitch": ("stitch", "histograms"),
    "impact": ("stitch", "impact", "dispersion"),
    "sqrtlaw": ("stitch", "sqrtlaw"),
    "fairpricing": ("stitch", "fairpricing"),
    "run": ALL_STAGES,
}

HELP = {
    "calibrate": "fit a smile to every quote snapshot; write slices and parameter series",
    "stitch": "stitch fills into metaorders; write metaorders and histograms",
    "impact": "average impact curves for the length-filtered subsets",
    "sqrtlaw": "power-law fit of impact against participation rate",
    "fairpricing": "parameter-domain and portfolio-domain fair-pricing sets",
    "run": "the full pipeline",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with a [pipeline] section")
    for f in dataclasses.fields(PipelineConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*flags, dest=f.name, default=None, metavar=f.name.upper())


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="write a synthetic market with known impact")
    p.add_argument("--output_dir", "--output-dir", dest="output_dir", default="synth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n_days", "--n-days", dest="n_days", type=int, default=5)
    p.add_argument("--parameter", default="atmf_vol", choices=["atmf_vol", "atmf_skew"])
    p.add_argument("--metaorders_per_day", "--metaorders-per-day", dest="metaorders_per_day",
                   type=int, default=240)
    p.add_argument("--prefactor", type=float, default=1.0)
    p.add_argument("--exponent", type=float, default=0.5)
    p.add_argument("--relaxation_ratio", "--relaxation-ratio", dest="relaxation_ratio",
                   type=float, default=2.0 / 3.0)
    p.add_argument("--fair_pricing", "--fair-pricing", dest="fair_pricing", action="store_true")
    p.add_argument("--no_forward", "--no-forward", dest="no_forward", action="store_true",
                   help="leave the forward column empty so readers use parity")


def _add_report(sub):
    p = sub.add_parser("report", help="summarise a run directory, optionally against a ledger")
    p.add_argument("run_dir")
    p.add_argument("--ledger", help="ledger.json written by 'simulate'")
    p.add_argument("--json", action="store_true", help="print machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="optimpact", description="Market impact of option metaorders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in HELP.items():
        _add_config_flags(sub.add_parser(name, help=text))
    _add_simulate(sub)
    _add_report(sub)
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)}
    return load_config(args.config, **overrides)


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    report = run_pipeline(cfg, STAGES[args.command])
    c = report.counts
    print(f"ingested={c['orders_ingested']} assigned={c['assigned']} quarantined={c['quarantined']} "
          f"passive={c['passive_excluded']} metaorders={c['metaorders']} -> {cfg.output_dir}")
    for stage, msg in sorted(report.errors.items()):
        print(f"stage {stage} failed: {msg}", file=sys.stderr)
    return EXIT_ANALYSIS if report.errors else EXIT_OK


def cmd_simulate(args) -> int:
    from .synth import ImpactModel, AgentModel, SynthConfig, simulate
    cfg = SynthConfig(
        seed=args.seed, n_days=args.n_days, parameter=args.parameter,
        impact=ImpactModel(prefactor=args.prefactor, exponent=args.exponent,
                           relaxation_ratio=args.relaxation_ratio, fair_pricing=args.fair_pricing),
        agents=AgentModel(metaorders_per_day=args.metaorders_per_day),
        emit_forward=not args.no_forward)
    paths = simulate(cfg).write(args.output_dir)
    paths["config"] = write_synth_config(cfg, args.output_dir)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def write_synth_config(cfg, outdir) -> str:
    """A pipeline config matching the simulated venue, so ``run --config`` just works."""
    out = Path(outdir)
    cal = cfg.calendar
    text = ("[pipeline]\n"
            "trades = trades.csv\n"
            "quotes = quotes.csv\n"
            f"parameter = {cfg.parameter}\n"
            f"utc_offset_minutes = {cal.utc_offset_minutes}\n"
            f"session_open = {cal.session_open}\n"
            f"session_close = {cal.session_close}\n"
            f"relaxation_samples = {cfg.relaxation_samples}\n")
    path = out / "pipeline.ini"
    path.write_text(text)
    return str(path)


def _ledger_estimates(report: dict, run_dir: Path) -> dict:
    import pandas as pd
    from .pipeline import TABLE_FILES
    a = report.get("analyses", {})
    est = {}
    if isinstance(a.get("sqrtlaw"), dict):
        est["exponent"] = a["sqrtlaw"].get("exponent")
    impact = a.get("impact", {})
    if impact:
        first = sorted(k for k in impact if k.startswith("omega_"))
        label = min(first, key=lambda k: int(k.split("_")[1])) if first else None
        rec = impact.get(label, {}).get("parameter", {}) if label else {}
        est["relaxation_ratio"] = rec.get("relaxation_ratio")
    fair = a.get("fairpricing", {})
    if "theta" in fair:
        est["fair_slope"] = fair["theta"].get("slope")
        est["portfolio_slope"] = fair["portfolio"].get("slope")
    mo = run_dir / TABLE_FILES["metaorders"]
    if mo.exists():
        est["metaorders"] = pd.read_csv(mo, usecols=["metaorder_id", "rate"], dtype={"metaorder_id": str})
    return est


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "report.json"
    if not path.exists():
        raise ConfigError(f"no report.json in {run_dir}")
    report = json.loads(path.read_text())
    out = {"counts": report.get("counts"), "reconciled": report.get("reconciled"),
           "warnings": report.get("warnings"), "errors": report.get("errors")}
    if args.ledger:
        from .synth import GroundTruthLedger, ledger_check
        ledger = GroundTruthLedger.from_json(Path(args.ledger).read_text())
        table = ledger_check(ledger, _ledger_estimates(report, run_dir))
        out["ledger_check"] = table.to_dict(orient="records")
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True, default=str))
    else:
        c = out["counts"] or {}
        print(f"orders ingested : {c.get('orders_ingested')}")
        print(f"metaorders      : {c.get('metaorders')}")
        for k, v in sorted((c.get("omega") or {}).items()):
            print(f"  {k:<14}: {v}")
        print(f"reconciled      : {out['reconciled']}")
        for w in out["warnings"] or []:
            print(f"warning         : {w}")
        for stage, msg in sorted((out["errors"] or {}).items()):
            print(f"error [{stage}] : {msg}")
        for row in out.get("ledger_check", []):
            print(f"{row['quantity']:<17}estimate={row['estimate']:.4g} truth={row['truth']:.4g} "
                  f"abs_error={row['abs_error']:.3g}")
    return EXIT_ANALYSIS if out["errors"] else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_pipeline(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # noqa: BLE001 - surfaced as an analysis failure
        log.debug("unhandled error", exc_info=True)
        print(f"analysis error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
