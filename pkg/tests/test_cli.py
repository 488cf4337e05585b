import json
import math
import subprocess
import sys

import pytest

from bertrand import cli
from bertrand.io import dumps_json


def run(*argv):
    code, out, err = cli.execute(list(argv))
    return code, out, err


def test_family_darboux_mass():
    code, out, _ = run("family", "--type", "II", "--n", "2", "--m", "1", "--lambda", "1", "--preset", "darboux")
    assert code == 0
    cols = out.payload["columns"]
    for row in out.payload["rows"]:
        rec = dict(zip(cols, row))
        assert rec["M"] == pytest.approx(1 + rec["rho"] ** 2, rel=1e-12)


def test_family_euclidean_kepler():
    code, out, _ = run("family", "--type", "I", "--n", "1", "--m", "1", "--K", "0")
    assert code == 0
    for r, h, v, rho, M, *_ in out.payload["rows"]:
        assert h == pytest.approx(1.0) and rho == pytest.approx(r / 2, rel=1e-14) and M == pytest.approx(4.0)
        assert v == pytest.approx(1.0 / r, rel=1e-12)


def test_family_rejects_non_coprime():
    assert run("family", "--type", "I", "--n", "2", "--m", "2", "--K", "0")[0] == 2


def test_family_csv_header(capsys):
    assert cli.main(["family", "--preset", "kepler", "--format", "csv"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "r,h,V_perlick,rho,M,V_pdm"


def test_simulate_darboux_default_run():
    code, out, _ = run("simulate", "--preset", "darboux", "--lambda", "0.1", "--seed", "7")
    assert code == 0
    assert out.payload["max_drift"] <= 1e-8
    header = out.table[0]
    assert header[:7] == ["t", "q1", "q2", "q3", "p1", "p2", "p3"] and header[7] == "H"
    assert "C_11" in header


def test_simulate_outside_domain_exit_3():
    code, _, err = run("simulate", "--preset", "darboux", "--lambda", "-1", "--q", "1.5,0,0", "--p", "0,1,0")
    assert code == 3 and "outside" in err


def test_simulate_domain_exit_during_run():
    code, _, _ = run("simulate", "--type", "II", "--n", "3", "--m", "2", "--K", "0.1", "--D", "-0.2",
                     "--q", "0.5,0,0", "--p", "5,0.1,0", "--t-end", "20", "--dt", "0.01")
    assert code == 3


def test_simulate_flat_kepler_bound():
    code, out, _ = run("simulate", "--preset", "kepler", "--E", "-0.4", "--L", "1", "--periods", "5")
    assert code == 0 and out.payload["initial_state"]["source"] == "EL"


def test_simulate_budget_exceeded_exit_4():
    code, out, _ = run("simulate", "--preset", "kepler", "--excitation", "0.3", "--periods", "2",
                       "--budget", "1e-20")
    assert code == 4 and not out.payload["within_budget"]


def test_simulate_rejects_both_state_and_energy():
    assert run("simulate", "--preset", "kepler", "--q", "1,0,0", "--p", "0,1,0", "--E", "-0.5")[0] == 2


def test_apsidal_flat_kepler():
    code, out, _ = run("apsidal", "--preset", "kepler", "--excitation", "0.3")
    assert code == 0
    assert abs(out.payload["quadrature_deviation"]) <= 1e-8
    assert abs(out.payload["measured_deviation"]) <= 1e-4


def test_apsidal_darboux():
    code, out, _ = run("apsidal", "--preset", "darboux", "--lambda", "0.3", "--excitation", "0.2")
    assert code == 0
    assert out.payload["expected"] == pytest.approx(math.pi / 2)
    assert abs(out.payload["quadrature_deviation"]) <= 1e-6


def test_apsidal_unbounded_exit_5():
    code, _, _ = run("apsidal", "--preset", "kepler", "--E", "0.5", "--L", "1")
    assert code == 5


def test_integrals_darboux_state():
    code, out, _ = run("integrals", "--preset", "darboux", "--lambda", "0.5", "--q", "0.3,0.2,-0.4",
                       "--p", "0.5,-0.15,0.2")
    assert code == 0
    pl = out.payload
    assert pl["rank"] == pl["expected_rank"] == 5
    assert max(pl["involution_max"].values()) <= 1e-10
    assert max(abs(v) for v in pl["brackets_with_H"].values()) <= 1e-10
    assert pl["trace_identity_residual"] <= 1e-15


def test_integrals_degenerate_state_exit_2():
    # L_23 = 0 makes the gradient of C_(2) vanish
    code, _, err = run("integrals", "--preset", "darboux", "--lambda", "0.5", "--q", "0.3,0.2,-0.4",
                       "--p", "0.5,-0.1,0.2")
    assert code == 2 and "DegeneratePoint" in err


def test_spectrum_example():
    code, out, _ = run("spectrum", "--N", "3", "--lambda", "0.5", "--omega", "1", "--n-max", "4")
    assert code == 0
    levels = out.payload["levels"]
    assert levels[0]["E_numeric"] == pytest.approx(0.75, abs=1e-6)
    assert [lv["degeneracy_found"] for lv in levels] == [1, 3, 6, 10, 15]
    assert out.payload["continuum_bottom"] == 1.0


def test_spectrum_flat_levels():
    code, out, _ = run("spectrum", "--N", "3", "--lambda", "0", "--n-max", "2")
    assert code == 0
    for lv in out.payload["levels"]:
        assert lv["E_analytic"] == lv["n"] + 1.5
        assert abs(lv["E_numeric"] - (lv["n"] + 1.5)) <= 1e-6


def test_spectrum_negative_lambda_exit_2():
    assert run("spectrum", "--lambda", "-1")[0] == 2


def test_spectrum_mismatch_exit_6(monkeypatch):
    from bertrand import quantum_spectrum as qs
    monkeypatch.setattr(qs, "LEVEL_RTOL", 1e-30)
    code, out, _ = run("spectrum", "--lambda", "0.5", "--n-max", "1")
    assert code == 6 and out.payload["ok"] is False and "error" in out.payload


def test_sweep_apsidal_grid():
    code, out, _ = run("sweep", "--command", "apsidal", "--grid", "n:m=1:1,2:1", "--grid", "K=-0.2,0,0.2",
                       "--", "--type", "I", "--excitation", "0.2", "--no-trajectory")
    assert code == 0
    cells = out.payload["cells"]
    assert len(cells) == 6
    for c in cells:
        n, m = int(c["params"]["n"]), int(c["params"]["m"])
        assert abs(c["result"]["quadrature_angle"] - math.pi * m / n) <= 1e-6
    order = [(float(c["params"]["n"]), float(c["params"]["K"])) for c in cells]
    assert order == sorted(order)


def test_sweep_empty_grid_exit_2():
    assert run("sweep", "--command", "family")[0] == 2
    assert run("sweep", "--command", "family", "--grid", "K=")[0] == 2


def test_sweep_failing_cell_propagates():
    code, out, _ = run("sweep", "--command", "family", "--grid", "n=1,2", "--", "--type", "I", "--m", "2")
    assert code == 2
    assert sorted(c["exit_code"] for c in out.payload["cells"]) == [0, 2]


def test_sweep_parallel_matches_serial():
    args = ["sweep", "--command", "family", "--grid", "K=-0.2,0.1", "--", "--type", "I", "--n", "1", "--m", "1"]
    _, serial, _ = run(*args)
    _, parallel, _ = run(*args[:1], "--threads", "2", *args[1:])
    assert dumps_json(serial.payload) == dumps_json(parallel.payload)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"schema": 1, "preset": "darboux", "lam": 0.5, "points": 4}))
    code, out, _ = run("family", "--config", str(cfg), "--lambda", "1.0")
    assert code == 0 and out.payload["system"]["lam"] == 1.0 and len(out.payload["rows"]) == 4


def test_config_schema_and_unknown_keys(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 2}))
    assert run("family", "--config", str(bad))[0] == 2
    bad.write_text(json.dumps({"schema": 1, "colour": "red"}))
    assert run("family", "--config", str(bad))[0] == 2


def test_threads_env(monkeypatch):
    monkeypatch.setenv("BERTRAND_THREADS", "3")
    assert cli._threads(None) == 3
    monkeypatch.setenv("BERTRAND_THREADS", "x")
    with pytest.raises(cli.ConfigError):
        cli._threads(None)


def test_seeded_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["simulate", "--preset", "darboux", "--lambda", "0.5", "--seed", "11",
                         "--periods", "3", "--out", str(out), "--format", "csv"]) == 0
    assert (a / "trajectory.json").read_bytes() == (b / "trajectory.json").read_bytes()
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert json.loads((a / "trajectory.json").read_text())["seed"] == 11


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bertrand", "family", "--preset", "oscillator", "--points", "3"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert len(json.loads(proc.stdout)["rows"]) == 3
