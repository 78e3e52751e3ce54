import csv
import json

import pytest

from greenplace import cli
from greenplace.cli import COMPARE_COLUMNS, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_writes_three_files(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--algo", "hapso", "--synth", "60", "--seed", "1", "--steps", "6", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["config.json", "ledger.json", "steps.csv"]
    config = json.loads((out / "config.json").read_text())
    assert config["seed"] == 1 and config["algorithm"] == "hapso"
    assert json.loads((out / "ledger.json").read_text())["config"] == config
    assert "energy=" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path):
    args = ["run", "--algo", "aco_only", "--synth", "60", "--seed", "3", "--steps", "6"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("ledger.json", "steps.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_missing_swf(tmp_path, capsys):
    assert main(["run", "--swf", str(tmp_path / "missing.swf"), "--out", str(tmp_path)]) == 3
    assert "not found" in capsys.readouterr().err


def test_run_malformed_swf_reports_line(tmp_path, capsys):
    swf = tmp_path / "bad.swf"
    swf.write_text("; header\n1 2 3\n")
    assert main(["run", "--swf", str(swf), "--out", str(tmp_path / "o")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_run_swf_trace(tmp_path):
    swf = tmp_path / "ok.swf"
    swf.write_text("1 0 0 3600 4 -1 -1 4 -1 -1 1 1 1 -1 1 -1 -1 -1\n"
                   "2 700 0 1800 1 -1 -1 1 -1 -1 1 1 1 -1 1 -1 -1 -1\n")
    assert main(["run", "--algo", "ffd", "--swf", str(swf), "--out", str(tmp_path / "o")]) == 0
    ledger = json.loads((tmp_path / "o" / "ledger.json").read_text())
    assert ledger["placed"] == 2


def test_run_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hosts_per_site": 7}))
    assert main(["run", "--synth", "10", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_run_config_file_applies(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hosts_per_site": 24, "pso": {"t_max": 10}}))
    out = tmp_path / "o"
    assert main(["run", "--synth", "20", "--steps", "3", "--config", str(cfg), "--out", str(out)]) == 0
    config = json.loads((out / "config.json").read_text())
    assert config["hosts_per_site"] == 24 and config["pso"]["t_max"] == 10


def test_unknown_algorithm_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["run", "--algo", "uacs", "--synth", "10"])
    assert err.value.code == 2


def test_compare_shape(tmp_path, monkeypatch):
    monkeypatch.setenv("GREENPLACE_THREADS", "1")
    out = tmp_path / "c"
    argv = ["compare", "--algo", "hapso", "--algo", "ffd", "--synth", "40", "--steps", "4", "--out", str(out)]
    for s in range(1, 6):
        argv += ["--seed", str(s)]
    assert main(argv) == 0
    rows = read_csv(out / "compare.csv")
    assert [r["algorithm"] for r in rows] == ["hapso", "ffd"]
    assert all(r["n_runs"] == "5" and r["failures"] == "0" for r in rows)
    metric_groups = {c.rsplit("_", 1)[0] for c in COMPARE_COLUMNS if c.endswith(("_mean", "_std"))}
    assert metric_groups == {"energy_kwh", "carbon_kg", "cost_usd", "migrations", "sla_pct"}
    report = json.loads((out / "compare.json").read_text())
    assert report["provenance"]["seeds"] == [1, 2, 3, 4, 5]
    assert report["provenance"]["config"]["max_steps"] == 4
    text = (out / "compare.txt").read_text()
    assert "seeds: 1,2,3,4,5" in text and "±" in text
    assert len(list((out / "runs" / "synth-40").iterdir())) == 10


def test_compare_csv_header_is_stable(tmp_path, monkeypatch):
    monkeypatch.setenv("GREENPLACE_THREADS", "1")
    out = tmp_path / "c"
    assert main(["compare", "--algo", "ffd", "--algo", "bfd", "--synth", "20", "--seed", "1",
                 "--out", str(out)]) == 0
    header = (out / "compare.csv").read_text().splitlines()[0]
    assert header == ("workload,algorithm,n_runs,failures,energy_kwh_mean,energy_kwh_std,carbon_kg_mean,"
                      "carbon_kg_std,cost_usd_mean,cost_usd_std,migrations_mean,migrations_std,"
                      "sla_pct_mean,sla_pct_std")
    rows = read_csv(out / "compare.csv")
    assert all(float(r[c]) == 0.0 for r in rows for c in r if c.endswith("_std"))


def test_compare_needs_two_algorithms(tmp_path):
    assert main(["compare", "--algo", "ffd", "--synth", "10", "--out", str(tmp_path)]) == 2


def test_compare_marks_failures(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GREENPLACE_THREADS", "1")
    real = cli.run_simulation

    def flaky(config, workload):
        if config.algorithm == "bfd" and config.seed == 2:
            raise RuntimeError("boom")
        return real(config, workload)

    monkeypatch.setattr(cli, "run_simulation", flaky)
    out = tmp_path / "c"
    code = main(["compare", "--algo", "ffd", "--algo", "bfd", "--synth", "20", "--seed", "1", "--seed", "2",
                 "--out", str(out)])
    assert code == 1
    rows = {r["algorithm"]: r for r in read_csv(out / "compare.csv")}
    assert rows["bfd"]["failures"] == "1" and rows["bfd"]["n_runs"] == "1"
    assert rows["ffd"]["failures"] == "0"
    assert "FAILED" in (out / "compare.txt").read_text()
    assert "boom" in capsys.readouterr().err


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("GREENPLACE_THREADS", "zero")
    assert main(["compare", "--algo", "ffd", "--algo", "bfd", "--synth", "10", "--out", str(tmp_path)]) == 2
