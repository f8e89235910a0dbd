import json
import subprocess
import sys

import pytest

from optimpact.cli import EXIT_ANALYSIS, EXIT_OK, EXIT_SCHEMA, EXIT_USAGE, build_parser, main
from optimpact.io import TRADE_COLUMNS


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "--output_dir", str(out), "--seed", "11", "--n_days", "2",
                 "--metaorders_per_day", "40"])
    assert code == EXIT_OK
    return out


class TestParser:
    def test_subcommands(self):
        p = build_parser()
        for cmd in ("calibrate", "stitch", "impact", "sqrtlaw", "fairpricing", "run"):
            args = p.parse_args([cmd, "--n-star", "7", "--curve_buckets", "9"])
            assert args.n_star == "7" and args.curve_buckets == "9"

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == EXIT_USAGE

    def test_bad_flag_value(self, sim):
        assert main(["run", "--config", str(sim / "pipeline.ini"), "--n_star", "0"]) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.ini")]) == EXIT_USAGE


class TestEndToEnd:
    def test_simulate_outputs(self, sim):
        assert {"trades.csv", "quotes.csv", "ledger.json", "pipeline.ini"} <= {p.name for p in sim.iterdir()}

    def test_run_then_report(self, sim, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["run", "--config", str(sim / "pipeline.ini"), "--output-dir", str(run),
                     "--curve_buckets", "10", "--fit_buckets", "8"]) == EXIT_OK
        line = capsys.readouterr().out
        assert "ingested=" in line and "metaorders=" in line
        assert main(["report", str(run), "--ledger", str(sim / "ledger.json"), "--json"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["reconciled"] is True and not doc["errors"]
        quantities = {r["quantity"] for r in doc["ledger_check"]}
        # per-metaorder participation rates reconcile, otherwise the report would have failed
        assert quantities == {"exponent", "relaxation_ratio"}
        assert main(["report", str(run)]) == EXIT_OK
        assert "reconciled      : True" in capsys.readouterr().out

    def test_fair_pricing_ledger(self, tmp_path, capsys):
        data, run = tmp_path / "d", tmp_path / "r"
        assert main(["simulate", "--output_dir", str(data), "--seed", "3", "--n_days", "2",
                     "--metaorders_per_day", "40", "--fair_pricing"]) == EXIT_OK
        assert main(["fairpricing", "--config", str(data / "pipeline.ini"), "--output_dir", str(run),
                     "--fair_buckets", "5"]) == EXIT_OK
        capsys.readouterr()
        assert main(["report", str(run), "--ledger", str(data / "ledger.json"), "--json"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert {r["quantity"] for r in doc["ledger_check"]} == {"fair_slope", "portfolio_slope"}

    @pytest.mark.parametrize("cmd", ["calibrate", "stitch", "impact", "sqrtlaw", "fairpricing"])
    def test_stage_subcommands(self, sim, tmp_path, cmd):
        out = tmp_path / cmd
        assert main([cmd, "--config", str(sim / "pipeline.ini"), "--output_dir", str(out)]) == EXIT_OK
        assert (out / "report.json").exists()

    def test_schema_error(self, sim, tmp_path):
        bad = tmp_path / "t.csv"
        bad.write_text("timestamp,agent_id\n")
        assert main(["run", "--config", str(sim / "pipeline.ini"), "--trades", str(bad),
                     "--output_dir", str(tmp_path / "o")]) == EXIT_SCHEMA

    def test_empty_trades_exit_zero(self, sim, tmp_path):
        t = tmp_path / "t.csv"
        t.write_text(",".join(TRADE_COLUMNS) + "\n")
        out = tmp_path / "o"
        assert main(["run", "--config", str(sim / "pipeline.ini"), "--trades", str(t),
                     "--output_dir", str(out)]) == EXIT_OK
        doc = json.loads((out / "report.json").read_text())
        assert doc["counts"]["metaorders"] == 0
        assert doc["analyses"]["sqrtlaw"] == {"status": "empty"}

    def test_analysis_error(self, sim, tmp_path, monkeypatch):
        import optimpact.pipeline as pl

        def boom(*a, **k):
            raise RuntimeError("kaput")
        monkeypatch.setattr(pl, "sqrt_law_fit", boom)
        out = tmp_path / "o"
        assert main(["sqrtlaw", "--config", str(sim / "pipeline.ini"), "--output_dir", str(out)]) \
            == EXIT_ANALYSIS
        doc = json.loads((out / "report.json").read_text())
        assert "kaput" in doc["errors"]["sqrtlaw"]
        assert main(["report", str(out)]) == EXIT_ANALYSIS

    def test_report_without_run(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_USAGE


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "optimpact.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
