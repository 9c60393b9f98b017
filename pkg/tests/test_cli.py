import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from copas_bias.cli import main

DATA = Path(__file__).parent / "data"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_test_command_json(capsys):
    code, out, err = run(capsys, "test", DATA / "null_n10.csv", "--b-boot", 50, "--threads", 1)
    assert code == 0 and err == ""
    d = json.loads(out)
    for key in ("t_stat", "z_values", "argmax_point", "p_value", "b_boot", "null_fit", "grid",
                "comparators", "seed", "schema"):
        assert key in d
    assert len(d["z_values"]) == len(d["grid"]["points"]) == 9
    assert set(d["comparators"]) == {"egger", "trim_fill", "copas_naive"}
    assert 0.0 <= d["p_value"] <= 1.0


def test_biased_fixture_is_detected(capsys):
    code, out, _ = run(capsys, "test", DATA / "biased_rho08.csv", "--threads", 1)
    assert code == 0
    assert json.loads(out)["p_value"] <= 0.05


def test_output_independent_of_threads(capsys, tmp_path):
    outs = []
    for k in (1, 4):
        f = tmp_path / f"o{k}.json"
        code, out, _ = run(capsys, "test", DATA / "null_n10.csv", "--b-boot", 130,
                           "--threads", k, "--out", f)
        assert code == 0
        outs.append(f.read_bytes())
        assert f.read_text() == out
    assert outs[0] == outs[1]


def test_threads_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("COPAS_BIAS_THREADS", "two")
    code, _, err = run(capsys, "test", DATA / "null_n10.csv", "--b-boot", 10)
    assert code == 2 and "COPAS_BIAS_THREADS" in err


def test_explicit_grid_ranges(capsys):
    code, out, _ = run(capsys, "test", DATA / "null_n10.csv", "--b-boot", 10, "--threads", 1,
                       "--gamma1-range", "0.5,1.5", "--grid-points", 25, "--comparators", "egger")
    d = json.loads(out)
    assert code == 0 and d["grid"]["gamma1_range"] == [0.5, 1.5]
    assert all(0.5 <= g1 < 1.5 for _, g1 in d["grid"]["points"])
    assert list(d["comparators"]) == ["egger"]


def test_zero_standard_error_names_the_row(capsys, tmp_path):
    p = write(tmp_path, "study_id,y,s\na,0.1,0.2\nb,0.3,0.0\nc,0.2,0.3\n")
    code, out, err = run(capsys, "test", p)
    assert code == 2 and out == ""
    assert err.startswith("copas-bias: error: data:")
    assert ":3:" in err and "'b'" in err


@pytest.mark.parametrize("body,line", [
    ("study_id,y,s\na,0.1,0.2\n# note\nb,zero,0.1\nc,1,1\n", 4),
    ("study_id,y,s\na,0.1,0.2\nb,0.1\nc,1,1\n", 3),
    ("id,y,se\na,0.1,0.2\n", 1),
    ("study_id,y,s\na,0.1,0.2\na,0.3,0.2\nc,1,1\n", 3),
])
def test_malformed_rows(capsys, tmp_path, body, line):
    code, _, err = run(capsys, "test", write(tmp_path, body))
    assert code == 2
    assert re.search(rf"in\.csv:{line}:", err)
    assert err.count("\n") == 1


def test_too_few_studies(capsys, tmp_path):
    code, _, err = run(capsys, "test", write(tmp_path, "study_id,y,s\na,1,1\nb,2,1\n"))
    assert code == 2 and "at least 3" in err


def test_numerical_failure_exit_code(capsys, tmp_path):
    # equal standard errors make the Egger design singular
    p = write(tmp_path, "study_id,y,s\na,0.1,0.5\nb,0.4,0.5\nc,0.2,0.5\nd,0.9,0.5\n")
    code, _, err = run(capsys, "test", p, "--b-boot", 10, "--threads", 1)
    assert code == 3 and err.startswith("copas-bias: error: numerical:")


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    code, _, err = run(capsys, "test", DATA / "null_n10.csv", "--comparators", "begg")
    assert code == 2 and "begg" in err
    code, _, err = run(capsys, "sensitivity", DATA / "null_n10.csv")
    assert code == 2 and "--sweep" in err


def test_sensitivity_without_selection(capsys):
    code, out, _ = run(capsys, "sensitivity", DATA / "null_n10.csv", "--gamma0", "-1",
                       "--gamma1", "1000")
    d = json.loads(out)
    assert code == 0 and len(d["fits"]) == 1
    assert d["fits"][0]["mu_adj"] == pytest.approx(d["null_fit"]["mu_hat"], abs=1e-3)


def test_sensitivity_sweep(capsys):
    code, out, _ = run(capsys, "sensitivity", DATA / "null_n10.csv", "--sweep",
                       "--gamma1", "0.5,1.5")
    d = json.loads(out)
    assert code == 0 and len(d["fits"]) == 10
    assert {f["gamma1"] for f in d["fits"]} == {0.5, 1.5}


def test_simulate(capsys, tmp_path):
    csv_path = tmp_path / "rates.csv"
    code, out, _ = run(capsys, "simulate", "--n", 20, "--replicates", 200, "--seed", 3,
                       "--tests", "egger,copas_naive", "--threads", 1, "--csv", csv_path)
    d = json.loads(out)
    assert code == 0 and d["n_replicates"] == 200 and "metadata" not in d
    se = (0.05 * 0.95 / 200) ** 0.5
    assert abs(d["rejection_rates"]["copas_naive"]["0.05"] - 0.05) <= 3 * se
    assert csv_path.read_text().startswith("test,alpha,rejection_rate")


def test_simulate_config_file(capsys, tmp_path):
    cfg = write(tmp_path, json.dumps({"n": 12, "rho": 0.5, "model": "alt_inv_s2"}), "c.json")
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--rho", "0.2", "--replicates", 3,
                       "--tests", "egger", "--timing", "--threads", 1)
    d = json.loads(out)
    assert code == 0
    assert d["config"]["model"] == "alt_inv_s2" and d["config"]["rho"] == 0.2
    assert "mean_runtime" in d["metadata"]
    bad = write(tmp_path, json.dumps({"n": 12, "sigma": 1}), "bad.json")
    code, _, err = run(capsys, "simulate", "--config", bad)
    assert code == 2 and "sigma" in err


def test_funnel_markers(capsys, tmp_path):
    p = write(tmp_path, "study_id,y,s\na<1>,0.1,0.2\nb,0.3,0.1\nc,0.2,0.3\n")
    svg = tmp_path / "f.svg"
    code, out, _ = run(capsys, "funnel", p, "--out", svg)
    assert code == 0
    text = svg.read_text()
    assert text.count('class="study"') == 3
    assert text.count('class="contour"') == 3
    assert "a&lt;1&gt;" in text
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "study_id,y,s,x_px,y_px" and len(rows) == 4


def test_installed_entry_point():
    proc = subprocess.run([sys.executable, "-m", "copas_bias", "test",
                           str(DATA / "null_n10.csv"), "--b-boot", "20", "--threads", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["b_boot"] == 20
