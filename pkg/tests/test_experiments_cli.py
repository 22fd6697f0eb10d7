import csv
import json
from pathlib import Path

import pytest

from twostage import cli
from twostage.experiments import (ConfigError, ExperimentConfig, degenerate_gap,
                                  payment_sensitivity, rerun_manifest, run_experiment,
                                  social_cost_vs_n)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_g1_ledger(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["simulate", "--config", str(CONFIGS / "g1.json"), "--days", "10",
                     "--seed", "7", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "ledger.csv")
    assert rows[0][:3] == ["day", "player", "true_type"]
    assert len(rows) == 1 + 10 * 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [7] and manifest["kind"] == "simulate"
    assert manifest["flags"]["days"] == 10
    assert set(manifest["summary"]) == {"utilities", "welfare", "penalty_days",
                                        "product_form_gap"}
    # same flags, same bytes
    again = tmp_path / "again"
    cli.main(["simulate", "--config", str(CONFIGS / "g1.json"), "--days", "10",
              "--seed", "7", "--out", str(again)])
    assert (again / "ledger.csv").read_bytes() == (out / "ledger.csv").read_bytes()


def test_simulate_with_strategies_and_overrides(tmp_path):
    code = cli.main(["simulate", "--config", str(CONFIGS / "g1_mimic.json"), "--days", "300",
                     "--seed", "1", "--out", str(tmp_path), "--gamma", "0.5",
                     "--penalty-exponent", "3"])
    assert code == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["parameters"]["gamma"] == 0.5 and m["parameters"]["penalty_exponent"] == 3.0
    assert m["flags"]["gamma"] == 0.5


def test_simulate_dr_instance(tmp_path):
    assert cli.main(["simulate", "--config", str(CONFIGS / "dr_point_mass.json"), "--days",
                     "5", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "ledger.csv")
    assert len(rows) == 1 + 5 * 2
    assert rows[1][5].split(";")[:3] == ["1.0", "2.0", "4.0"]


def test_manifest_rerun_is_byte_identical(tmp_path):
    first = tmp_path / "a"
    cli.main(["experiment", "social_cost_vs_n", "--seeds", "0:5", "--out", str(first)])
    assert cli.main(["rerun", "--manifest", str(first / "manifest.json"),
                     "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "social_cost_vs_n.csv").read_bytes() == \
        (first / "social_cost_vs_n.csv").read_bytes()
    sim = tmp_path / "s"
    cli.main(["simulate", "--config", str(CONFIGS / "g1_mimic.json"), "--days", "200",
              "--seed", "3", "--out", str(sim)])
    rerun_manifest(sim / "manifest.json", tmp_path / "s2")
    assert (tmp_path / "s2" / "ledger.csv").read_bytes() == (sim / "ledger.csv").read_bytes()


def test_social_cost_falls_with_n(tmp_path):
    code = cli.main(["experiment", "social_cost_vs_n", "--config",
                     str(CONFIGS / "social_cost_vs_n.json"), "--seeds", "0:10",
                     "--out", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "social_cost_vs_n.csv")
    assert rows[0] == ["n", "mean_social_cost", "stderr"]
    means = [float(r[1]) for r in rows[1:]]
    assert len(means) == 8
    assert all(b < a for a, b in zip(means, means[1:]))


def test_payment_sensitivity_output(tmp_path):
    cfg = ExperimentConfig("payment_sensitivity", {"days": 200}, range(3), str(tmp_path))
    assert run_experiment(cfg) == 0
    rows = _rows(tmp_path / "payment_sensitivity.csv")
    assert rows[0] == ["mean", "avg_payment_received", "stderr"]
    assert [float(r[0]) for r in rows[1:]] == [0.5, 1.0, 2.0, 4.0]


def test_posted_price_comparison_output(tmp_path):
    cfg = ExperimentConfig("posted_price_comparison", {"days": 300}, range(3), str(tmp_path))
    assert run_experiment(cfg) == 0
    sweep = _rows(tmp_path / "posted_price_sweep.csv")
    assert sweep[0] == ["price", "mean_social_cost", "stderr"] and len(sweep) == 51
    ref = _rows(tmp_path / "mechanism_cost.csv")
    assert ref[0] == ["mean_social_cost", "stderr", "best_price", "gap"]
    assert float(ref[1][3]) > 0


def test_posted_price_comparison_on_point_masses(tmp_path):
    doc = json.loads((CONFIGS / "dr_point_mass.json").read_text())
    cfg = ExperimentConfig("posted_price_comparison", {"instance": doc, "days": 5}, (0, 1),
                           str(tmp_path))
    run_experiment(cfg)
    ref = _rows(tmp_path / "mechanism_cost.csv")
    assert float(ref[1][0]) == 14.0 and float(ref[1][2]) == 4.0 and float(ref[1][3]) == 0.0
    assert degenerate_gap() == 0.0


def test_acceptance_suite_subset(tmp_path):
    cfg = tmp_path / "suite.json"
    cfg.write_text(json.dumps({"parameters": {"criteria": [1, 7]}}))
    code = cli.main(["experiment", "acceptance_suite", "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
    assert code == 0
    rows = _rows(tmp_path / "out" / "acceptance.csv")
    assert rows[0][:3] == ["criterion", "name", "passed"]
    assert [(r[0], r[2]) for r in rows[1:]] == [("1", "1"), ("7", "1")]


def test_workers_do_not_change_results():
    a = social_cost_vs_n(4, range(3), 200, workers=1)
    b = social_cost_vs_n(4, range(3), 200, workers=2)
    assert a == b
    assert payment_sensitivity((1.0, 2.0), range(2), 100, workers=2) == \
        payment_sensitivity((1.0, 2.0), range(2), 100, workers=1)


@pytest.mark.parametrize("argv", [["experiment", "bogus"], ["simulate"], [],
                                  ["experiment", "simulate", "--seeds", "x"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as e:
        cli.main(argv)
    assert e.value.code == 2


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "n": 2,\n  "types": [0, 1\n}\n')
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.json:4:1" in capsys.readouterr().err
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"n": 2, "types": [0, 1], "o1": ["A"], "o2": ["x"],
                                   "valuation": []}))
    assert cli.main(["simulate", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert "cost" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("plot", {})
    with pytest.raises(ConfigError):
        ExperimentConfig("simulate", {}, seeds=())
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("simulate", {}, output_dir="/tmp/unused"))
