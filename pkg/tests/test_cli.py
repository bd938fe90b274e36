import csv
import json

import numpy as np
import pytest

from phev_ems import cli
from phev_ems.cycles import DriveCycle, write_cycle

FAST = """\
[dp]
soc_step_frac = 0.002
power_step_frac = 0.05

[problem]
soc_init_frac = 0.405
"""


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.toml"
    p.write_text(FAST)
    return str(p)


def _report(d):
    return json.loads((d / "report.json").read_text())


def _trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("PHEV_EMS_CONFIG", raising=False)
    assert cli.main(["run", "--synth", "gentle", "--out", str(tmp_path / "o")]) == 2
    assert "--config" in capsys.readouterr().err


def test_bad_flags_are_usage_errors(tmp_path, fast_cfg):
    out = str(tmp_path / "o")
    assert cli.main(["run", "--config", fast_cfg, "--out", out]) == 2  # no cycle source
    assert cli.main(["run", "--config", fast_cfg, "--synth", "gentle", "--strategies", "mpc", "--out", out]) == 2
    assert cli.main(["run", "--config", fast_cfg, "--cycle", str(tmp_path / "nope.csv"), "--out", out]) == 2


def test_bad_config_key_reported(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[admm]\nrho4 = 'x'\n")
    assert cli.main(["run", "--config", str(cfg), "--synth", "gentle", "--out", str(tmp_path / "o")]) == 2
    assert "admm.rho4" in capsys.readouterr().err


def test_engine_off_cycle_cdcs_uses_no_fuel(tmp_path, fast_cfg):
    cfg = tmp_path / "default.toml"
    cfg.write_text("")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--synth", "gentle", "--strategies", "cdcs", "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["schema_version"] == 1
    assert rep["strategies"]["cdcs"]["fuel_J"] == 0.0
    assert set(rep["strategies"]) == {"cdcs"}
    assert rep["comparisons"]["fuel_savings_vs_cdcs"]["cdcs"] is None  # 0 / 0 is undefined


def test_infeasible_cycle_exits_2(tmp_path, fast_cfg, capsys):
    f = tmp_path / "climb.csv"
    write_cycle(DriveCycle(np.full(4, 25.0), np.full(4, 0.12)), f)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", fast_cfg, "--cycle", str(f), "--out", str(out)]) == 2
    assert "step 0" in _report(out)["error"]


def test_non_convergence_exits_3(tmp_path):
    cfg = tmp_path / "cap.toml"
    cfg.write_text(FAST + "\n[admm]\nmax_iters_convex = 3\nmax_iters_binary = 3\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--synth", "urban", "--strategies", "admm", "--out", str(out)]) == 3
    e = _report(out)["strategies"]["admm"]
    assert e["converged"] is False and e["iterations"] == {"convex": 3, "binary": 3}


@pytest.fixture(scope="module")
def urban_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("urban")
    cfg = d / "fast.toml"
    cfg.write_text(FAST)
    runs = []
    for name in ("a", "b"):
        out = d / name
        code = cli.main(["run", "--config", str(cfg), "--synth", "urban", "--seed", "3", "--out", str(out), "--trace"])
        runs.append((code, out))
    return runs


def test_full_run_artifacts(urban_run):
    code, out = urban_run[0]
    assert code == 0
    rep = _report(out)
    s = rep["strategies"]
    for name in ("admm", "dp", "cdcs"):
        assert s[name]["status"] == "ok" and (out / f"trace_{name}.csv").exists()
        assert s[name]["fuel_with_driveability_J"] == pytest.approx(s[name]["fuel_J"] + s[name]["driveability_J"])
    comp = rep["comparisons"]
    frac = (s["cdcs"]["fuel_J"] - s["admm"]["fuel_J"]) / (s["cdcs"]["fuel_J"] - s["dp"]["fuel_J"])
    assert comp["dp_savings_fraction_admm"] == pytest.approx(frac)
    assert comp["definitions"]["dp_savings_fraction_admm"]
    assert s["dp"]["fuel_J"] <= s["cdcs"]["fuel_J"] and s["admm"]["fuel_J"] <= s["cdcs"]["fuel_J"]
    hist = _trace(out / "admm_iterations.csv")
    assert list(hist[0]) == ["iter", "phase", "primal_norm", "dual_norm", "objective", "sigma_changes"]


def test_trace_conservation_is_exact(urban_run):
    _, out = urban_run[0]
    for name in ("admm", "dp", "cdcs"):
        rows = _trace(out / f"trace_{name}.csv")
        assert list(rows[0]) == list(cli.TRACE_COLUMNS)
        soc = np.array([float(r["soc_j"]) for r in rows])
        p = np.array([float(r["p_b_w"]) for r in rows[:-1]])
        assert np.all(soc[1:] == soc[:-1] - p * 1.0)
        assert rows[-1]["p_b_w"] == "" and int(rows[-1]["k"]) == len(rows) - 1
        rep = _report(out)["strategies"][name]
        assert float(rows[-1]["fuel_cum"]) == rep["fuel_J"]


def test_report_deterministic_except_wall_time(urban_run):
    (_, a), (_, b) = urban_run
    ra, rb = _report(a), _report(b)
    for rep in (ra, rb):
        for e in rep["strategies"].values():
            e.pop("wall_time_s")
        rep["cycle"].pop("source")
    assert ra == rb
    for name in ("admm", "dp", "cdcs"):
        assert (a / f"trace_{name}.csv").read_text() == (b / f"trace_{name}.csv").read_text()


@pytest.mark.slow
def test_batch_of_ten_seeds(tmp_path, fast_cfg):
    out = tmp_path / "batch"
    assert cli.main(["batch", "--config", fast_cfg, "--synth", "urban", "--seeds", "0-9", "--out", str(out)]) == 0
    reports = sorted(out.glob("*/report.json"))
    assert len(reports) == 10
    agg = json.loads((out / "aggregate.json").read_text())
    assert len(agg["cycles"]) == 10 and agg["failures"] == []
    frac = agg["dp_savings_fraction_admm"]
    assert frac["count"] == 10 and frac["min"] <= frac["mean"] <= frac["max"]
    assert "fuel_CDCS" in agg["definitions"]["dp_savings_fraction_admm"]
    with open(out / "timing_histogram.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["strategy"] for r in rows} == {"admm", "dp", "cdcs"}
    for name in ("admm", "dp", "cdcs"):
        assert sum(int(r["count"]) for r in rows if r["strategy"] == name) == 10
    assert all(float(r["bin_lo_s"]) <= float(r["bin_hi_s"]) for r in rows)


def test_batch_records_failures_and_continues(tmp_path, fast_cfg):
    d = tmp_path / "cycles"
    d.mkdir()
    write_cycle(DriveCycle(np.full(4, 25.0), np.full(4, 0.12)), d / "a_climb.csv")
    (d / "b_broken.csv").write_text("t_s,v_mps,grade_rad\n0,0,0\n2,1,0\n")
    write_cycle(DriveCycle(np.zeros(10), np.zeros(10)), d / "c_parked.csv")
    out = tmp_path / "out"
    code = cli.main(["batch", "--config", fast_cfg, "--cycles-dir", str(d), "--strategies", "cdcs", "--out", str(out)])
    assert code == 2
    agg = json.loads((out / "aggregate.json").read_text())
    assert [r["cycle"] for r in agg["cycles"]] == ["a_climb", "b_broken", "c_parked"]
    assert agg["failures"] == ["a_climb", "b_broken"]
    assert _report(out / "c_parked")["strategies"]["cdcs"]["fuel_J"] == 0.0


def test_seed_parser():
    assert cli._parse_seeds("0-3") == [0, 1, 2, 3]
    assert cli._parse_seeds("1,4,7") == [1, 4, 7]
    with pytest.raises(cli.UsageError):
        cli._parse_seeds("3-1")
