import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import memsvi.cli as cli
from memsvi import analytic1d as an
from memsvi.core import InvariantViolation, read_field_csv


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_classify_examples(capsys):
    code, out, _ = run(capsys, "classify", "--lambda", 4, "--W", 1)
    rec = json.loads(out)
    assert code == 0
    assert rec["case"] == "II(v)" and rec["n_unzipped"] == 1 and rec["n_zipped"] == 0
    assert rec["lambda_star"] == pytest.approx(5.2698, abs=1e-4)
    assert rec["r0"] == pytest.approx(0.388346, abs=1e-6)
    assert len(rec["branch_points"]) == 1 and rec["halfwidth"] is None

    code, out, _ = run(capsys, "classify", "--lambda", 6, "--W", 1)
    rec = json.loads(out)
    assert rec["case"] == "II(i)" and rec["halfwidth"] == pytest.approx(0.0628, abs=1e-4)
    assert rec["branch_points"] == []

    code, out, _ = run(capsys, "classify", "--lambda", "1e9", "--W", 1)
    rec = json.loads(out)
    assert rec["n_zipped"] == 1 and 0.999 < rec["halfwidth"] < 1

    code, out, _ = run(capsys, "classify", "--lambda", 10, "--W", 3)
    assert json.loads(out)["fold_lambda"] is None


def test_usage_errors_exit_one(capsys, tmp_path):
    assert run(capsys, "classify", "--W", 1)[0] == 1
    assert run(capsys, "classify", "--lambda", 4, "--W", "-1")[0] == 1
    assert run(capsys, "classify", "--lambda", 4, "--W", tmp_path / "missing.csv")[0] == 1
    assert run(capsys, "stationary", "--lambda", 4, "--W", 1, "--config", tmp_path / "nope.json")[0] == 1
    assert run(capsys, "evolve", "--lambda", 4, "--W", 1, "--h", -1)[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "stationary", "--lambda", 4, "--W", 1, "--n", 2)[0] == 1
    assert run(capsys, "analytic", "--W", 1, "--lambda-min", 5, "--lambda-max", 1)[0] == 1
    assert run(capsys, "--help")[0] == 0


def test_classify_refuses_sampled_dielectric(capsys, tmp_path):
    path = tmp_path / "w.csv"
    x = np.linspace(-1, 1, 11)
    path.write_text("x,W\n" + "".join(f"{a},{1 + a * a}\n" for a in x))
    code, _, err = run(capsys, "classify", "--lambda", 4, "--W", path)
    assert code == 1 and "constant W" in err


def test_invariant_violation_exits_two(capsys, monkeypatch):
    def boom(*a, **k):
        raise InvariantViolation("energy slack breach")
    monkeypatch.setattr(cli, "monotone_stationary", boom)
    code, _, err = run(capsys, "stationary", "--lambda", 4, "--W", 1, "--n", 11)
    assert code == 2 and "energy slack" in err


def test_stationary_csv_and_roundtrip(capsys, tmp_path):
    out = tmp_path / "profile.csv"
    code, text, _ = run(capsys, "stationary", "--lambda", 8, "--W", 1, "--n", 201, "--out", out)
    assert code == 0
    summary = json.loads(text)
    assert summary["zipped"] is True
    data = rows(out)
    assert list(data[0]) == ["x", "u", "zeta", "W"]
    u = np.array([float(r["u"]) for r in data])
    zeta = np.array([float(r["zeta"]) for r in data])
    assert u.min() == -1.0 and np.all(zeta <= 0) and np.all(zeta[u > -1] == 0)
    # re-ingest the profile as u and a shifted copy as a sampled W
    back = read_field_csv(out, column="u")
    np.testing.assert_allclose(back.values, u, rtol=1e-15)
    wpath = tmp_path / "w.csv"
    with open(wpath, "w") as fh:
        fh.write("x,W\n")
        for r in data:
            fh.write(f"{r['x']},{2 + float(r['u']):.15g}\n")
    code, text, _ = run(capsys, "stationary", "--lambda", 8, "--W", wpath, "--out", tmp_path / "p2.csv")
    assert code == 0 and json.loads(text)["n"] == 201


def test_two_dimensional_stationary(capsys, tmp_path):
    out = tmp_path / "p.csv"
    code, text, _ = run(capsys, "stationary", "--lambda", 30, "--W", 1, "--n", 17, "--dim", 2, "--out", out)
    assert code == 0
    assert list(rows(out)[0]) == ["x", "y", "u", "zeta", "W"]
    assert len(rows(out)) == 17 * 17


def test_thresholds_report(capsys, tmp_path):
    out = tmp_path / "report.json"
    code, _, _ = run(capsys, "thresholds", "--W", 1, "--n", 401, "--out", out)
    assert code == 0
    rep = json.loads(out.read_text())
    lo, hi = rep["lambda_z_estimate"]
    assert 5.26 <= lo < hi <= 5.61
    assert rep["unzipped_lower"] <= lo and hi <= rep["pullin_upper"]


def test_evolve_heat_decay(capsys, tmp_path):
    out = tmp_path / "traj"
    code, _, _ = run(capsys, "evolve", "--lambda", 0, "--W", 1, "--n", 101, "--h", 0.01, "--T", 1,
                     "--out", out)
    assert code == 0
    ledger = rows(out / "ledger.csv")
    assert list(ledger[0]) == ["t", "energy", "kinetic", "slack"]
    energy = np.array([float(r["energy"]) for r in ledger])
    assert np.all(np.diff(energy) <= 0)
    assert len(ledger) == 100
    events = json.loads((out / "events.json").read_text())
    assert events["touchdown_time"] is None and events["zipping_time"] is None
    assert events["T_z_bound"] is None
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert len(snaps) == len(events["snapshot_times"]) == 11
    assert np.all(np.array([float(r["u"]) for r in rows(snaps[-1])]) == 0)


def test_evolve_zipping_events_and_penalty(capsys, tmp_path):
    out = tmp_path / "traj"
    code, _, _ = run(capsys, "evolve", "--lambda", 4 * np.pi ** 2, "--W", 1, "--n", 51, "--h", 1e-3,
                     "--T", 0.3, "--every", 50, "--out", out)
    assert code == 0
    ev = json.loads((out / "events.json").read_text())
    assert ev["zipping_time"] is not None and ev["zipping_time"] <= ev["T_z_bound"] + 1e-3
    pen = tmp_path / "pen"
    code, _, _ = run(capsys, "evolve", "--lambda", 8, "--W", 1, "--n", 51, "--h", 0.01, "--T", 1.5,
                     "--penalty", 1e3, "--out", pen)
    assert code == 0
    ev = json.loads((pen / "events.json").read_text())
    assert ev["penalty"] == 1e3 and ev["zipping_time"] is not None


def test_evolve_from_profile_file(capsys, tmp_path):
    prof = tmp_path / "p.csv"
    run(capsys, "stationary", "--lambda", 3, "--W", 1, "--n", 51, "--out", prof)
    code, text, _ = run(capsys, "evolve", "--lambda", 6, "--W", 1, "--u0", prof, "--h", 0.01,
                        "--T", 0.2, "--out", tmp_path / "t")
    assert code == 0 and json.loads(text)["n_steps"] == 20


def test_compare_overlay(capsys, tmp_path):
    out = tmp_path / "cmp.csv"
    code, text, _ = run(capsys, "compare", "--lambda", 4, "--W", 1, "--n", 201, "--out", out)
    assert code == 0
    data = rows(out)
    assert list(data[0]) == ["x", "u_numeric", "u_analytic", "error"]
    err = np.array([float(r["error"]) for r in data])
    assert err.max() == pytest.approx(json.loads(text)["sup_error"], rel=1e-12)
    assert err.max() < 5e-3


def test_analytic_sweep(capsys, tmp_path):
    out = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "analytic", "--W", 1, "--lambda-min", 1, "--lambda-max", 7, "--num", 61,
                     "--out", out)
    assert code == 0
    data = rows(out)
    assert list(data[0]) == ["lambda", "m1", "m2", "a", "case"]
    cases = {r["case"] for r in data}
    assert {"II(v)", "II(iii)", "II(i)"} <= cases
    for r in data:
        lam = float(r["lambda"])
        assert (r["a"] != "") == (lam > an.lambda_star(1.0))


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": 8.0, "W": 1.0, "n": 51, "outer_tol": 1e-12}))
    code, text, _ = run(capsys, "stationary", "--config", cfg, "--out", tmp_path / "a.csv")
    assert json.loads(text)["lambda"] == 8.0
    code, text, _ = run(capsys, "stationary", "--config", cfg, "--lambda", 3, "--out", tmp_path / "b.csv")
    assert json.loads(text)["lambda"] == 3.0 and json.loads(text)["n"] == 51
    cfg.write_text(json.dumps({"lambda": 8.0, "W": 1.0, "psor_omega": 3.0}))
    assert run(capsys, "stationary", "--config", cfg, "--out", tmp_path / "c.csv")[0] == 1


def test_outputs_are_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        run(capsys, "thresholds", "--W", 1, "--n", 51, "--bisect-tol", 0.05, "--seed", 7, "--out", p)
    assert a.read_bytes() == b.read_bytes()
    ta, tb = tmp_path / "ta", tmp_path / "tb"
    for p in (ta, tb):
        run(capsys, "evolve", "--lambda", 8, "--W", 1, "--n", 31, "--h", 0.01, "--T", 0.3, "--out", p)
    for name in ("ledger.csv", "events.json", "snapshot_00003.csv"):
        assert (ta / name).read_bytes() == (tb / name).read_bytes()


def test_precision_override(capsys, monkeypatch):
    monkeypatch.setenv("MEMSVI_PRECISION", "5")
    _, out, _ = run(capsys, "classify", "--lambda", 4, "--W", 1)
    assert json.loads(out)["lambda_star"] == 5.2697


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "memsvi", "classify", "--lambda", "6", "--W", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["case"] == "II(i)"
    proc = subprocess.run([sys.executable, "-m", "memsvi", "classify"], capture_output=True, text=True)
    assert proc.returncode == 1
