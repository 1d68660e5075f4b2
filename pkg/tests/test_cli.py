from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

import pytest

from priceexposure.cli import build_parser, main
from priceexposure.config import bundled

DATA = Path(__file__).parent / "data"
PANEL = str(bundled("synthetic_panel.csv"))
PRICES = str(bundled("synthetic_prices.csv"))
SMALL_MC = "[DEFAULT]\nreplications = 12\nseed = 4\n[a]\nn_regions = 20\nn_periods = 10\n[b]\nn_regions = 10\nn_periods = 20\n"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _subparsers():
    parser = build_parser()
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def test_every_flag_is_documented():
    for name, sub in _subparsers().items():
        text = sub.format_help()
        for act in sub._actions:
            for opt in act.option_strings:
                assert opt in text, (name, opt)
            assert act.help, (name, act.dest)


def test_subcommands_present():
    assert set(_subparsers()) == {"estimate", "mc", "oracle", "sensitivity", "model", "simulate"}


def test_estimate_golden(capsys):
    code, out, _ = run(capsys, "estimate", "--panel", PANEL, "--prices", PRICES, "--fixed-effects", "region",
                       "--b-lower", "-0.1", "--b-upper", "0.1", "--format", "json")
    assert code == 0
    assert out == (DATA / "estimate_synthetic.json").read_text()


def test_estimate_text_table(capsys):
    code, out, _ = run(capsys, "estimate", "--panel", PANEL, "--prices", PRICES, "--fixed-effects", "region")
    assert code == 0
    header = out.splitlines()[0]
    assert header.split() == ["First", "stage", "Reduced", "form", "OLS", "2SLS"]
    assert "P-E SE" in out and "Clustered SE (region)" in out


def test_estimate_with_controls_and_output_file(capsys, tmp_path):
    dest = tmp_path / "r.json"
    code, out, _ = run(capsys, "estimate", "--panel", PANEL, "--prices", PRICES, "--controls", "1",
                       "--methods", "pe,robust,cluster_time", "--output", str(dest))
    assert code == 0
    rep = json.loads(dest.read_text())
    assert rep["spec"]["controls"] == ["1"]
    assert set(rep["estimates"]["two_sls"]["variance"]) == {"price_exposure", "ehw", "cluster_time"}


def test_sensitivity_reads_estimate_report(capsys, tmp_path):
    code, _, _ = run(capsys, "sensitivity", "--report", str(DATA / "estimate_synthetic.json"),
                     "--b-upper", "0.2", "--format", "json")
    assert code == 0


def test_sensitivity_worked_example(capsys):
    code, out, _ = run(capsys, "sensitivity", "--beta-hat", "0.535", "--se", "0.476", "--format", "json")
    rep = json.loads(out)
    assert code == 0
    assert [round(x, 3) for x in rep["im_interval"]] == [-0.398, 1.468]


def test_input_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "estimate", "--panel", str(tmp_path / "none.csv"), "--prices", PRICES)[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("region,period,outcome,treatment,exposure\n1,1,x,1,1\n")
    code, _, err = run(capsys, "estimate", "--panel", str(bad), "--prices", PRICES)
    assert code == 2 and ":2" in err
    assert run(capsys, "estimate", "--panel", PANEL, "--prices", PRICES, "--methods", "boot")[0] == 2
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[a]\nn_regions = 4\nn_periods = 2\nbogus = 1\n")
    code, _, err = run(capsys, "mc", str(cfg))
    assert code == 2 and "bogus" in err
    assert run(capsys, "sensitivity", "--beta-hat", "1")[0] == 2


def test_degenerate_design_exits_3(capsys, tmp_path):
    panel = tmp_path / "p.csv"
    rows = ["region,period,outcome,treatment,exposure"]
    for i in range(3):
        for t in range(1, 4):
            rows.append(f"{i},{t},{i + t * 0.1 + (i * t) % 2},{(i + 2 * t) % 3},1.0")
    panel.write_text("\n".join(rows) + "\n")
    prices = tmp_path / "q.csv"
    prices.write_text("period,sector,price\n1,0,1.0\n2,0,2.0\n3,0,1.5\n")
    code, _, err = run(capsys, "estimate", "--panel", str(panel), "--prices", str(prices))
    assert code == 3 and err.startswith("degenerate")


def test_model_command(capsys):
    code, out, _ = run(capsys, "model", str(bundled("model_example.cfg")), "--format", "json")
    rep = json.loads(out)
    assert code == 0 and rep["profile"]["n_non_monotone"] == 1
    assert rep["threshold_phi"]["north"] == pytest.approx(17 / 30)
    code, out, _ = run(capsys, "model", str(bundled("model_example.cfg")), "--sweep-region", "north",
                       "--phi-steps", "5", "--format", "json")
    assert code == 0 and len(json.loads(out)["sweep"]["points"]) == 5


def test_oracle_command(capsys):
    code, out, _ = run(capsys, "oracle", str(bundled("oracle_twfe.cfg")), "--format", "json")
    rep = json.loads(out)
    assert code == 0 and "twfe" in rep and "weight_audit" in rep


def test_simulate_round_trip(capsys, tmp_path):
    p, q = tmp_path / "p.csv", tmp_path / "q.csv"
    code, _, _ = run(capsys, "simulate", str(bundled("synthetic_panel.cfg")),
                     "--panel-out", str(p), "--prices-out", str(q))
    assert code == 0
    assert p.read_bytes() == Path(PANEL).read_bytes()
    assert q.read_bytes() == Path(PRICES).read_bytes()


def _json_runs(tmp_path):
    cfg = tmp_path / "mc.cfg"
    cfg.write_text(SMALL_MC)
    return [
        ["estimate", "--panel", PANEL, "--prices", PRICES, "--b-upper", "0.1"],
        ["mc", str(cfg)],
        ["oracle", str(bundled("oracle_gamma.cfg"))],
        ["sensitivity", "--beta-hat", "1.2", "--se", "0.3", "--b-upper", "0.5"],
        ["model", str(bundled("model_example.cfg"))],
        ["simulate", str(bundled("oracle_comove.cfg")), "--panel-out", str(tmp_path / "a.csv"),
         "--prices-out", str(tmp_path / "b.csv")],
    ]


def test_json_is_byte_identical_across_runs(capsys, tmp_path):
    for argv in _json_runs(tmp_path):
        first = run(capsys, *argv, "--format", "json")
        second = run(capsys, *argv, "--format", "json")
        assert first[0] == 0 and first[1] == second[1], argv[0]


def test_mc_identical_across_worker_counts(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "mc.cfg"
    cfg.write_text(SMALL_MC)
    one = run(capsys, "mc", str(cfg), "--workers", "1", "--format", "json")[1]
    two = run(capsys, "mc", str(cfg), "--workers", "2", "--format", "json")[1]
    monkeypatch.setenv("PRICEEXPOSURE_WORKERS", "3")
    three = run(capsys, "mc", str(cfg), "--format", "json")[1]
    assert one == two == three


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "priceexposure.cli", "sensitivity", "--beta-hat", "1",
                          "--se", "0.1", "--format", "json"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["breakdown_point"] == pytest.approx(0.8355146373, abs=1e-9)
