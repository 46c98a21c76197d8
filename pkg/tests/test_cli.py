import csv
import hashlib
import json
import math
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest

from slopehom import PanelSchema, load_panel_csv, load_table
from slopehom.cli import main

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
PANEL_ARGS = ["--regressors", "x1,x2"]
SMALL_Q = ["--n-paths", "16384", "--n-steps", "256", "--seed", "7"]


def run(capsys, *argv):
    status = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return status, out, err


@pytest.fixture(scope="module")
def table_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("q") / "small.slq"
    assert main(["quantiles", *SMALL_Q, "--out", str(path), "--json"]) == 0
    return path


def test_cmd(name, *extra):
    return ["test", "--csv", DATA / name, *PANEL_ARGS, *extra]


test_cmd.__test__ = False


def structure(obj):
    if isinstance(obj, dict):
        return {k: structure(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [structure(obj[0])] if obj else []
    return type(obj).__name__


def assert_close_tree(got, want, path="$"):
    if isinstance(want, dict):
        assert set(got) == set(want), path
        for k in want:
            assert_close_tree(got[k], want[k], f"{path}.{k}")
    elif isinstance(want, list):
        assert len(got) == len(want), path
        for i, (g, w) in enumerate(zip(got, want)):
            assert_close_tree(g, w, f"{path}[{i}]")
    elif isinstance(want, float):
        assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12), path
    else:
        assert got == want, path


def test_homogeneous_fixture_fails_to_reject(capsys, table_file):
    status, out, _ = run(capsys, *test_cmd("homogeneous.csv", "--delta", "0.5",
                                           "--quantile-table", table_file))
    assert status == 0
    assert "fail to reject" in out


@pytest.mark.parametrize("variant", ["slope", "pred"])
def test_heterogeneous_fixture_rejects(capsys, table_file, variant):
    status, out, _ = run(capsys, *test_cmd("heterogeneous.csv", "--delta", "0.01", "--variant",
                                           variant, "--quantile-table", table_file, "--json"))
    report = json.loads(out)
    assert status == 0
    assert report["decision"] == "reject" and report["reject"] is True
    assert report["variant"] == variant


def test_json_report_matches_golden(capsys, table_file):
    status, out, _ = run(capsys, *test_cmd("heterogeneous.csv", "--delta", "0.01",
                                           "--quantile-table", table_file, "--json"))
    assert status == 0
    report = json.loads(out)
    golden = json.loads((GOLDEN / "test_report.json").read_text())
    assert structure(report) == structure(golden)
    assert_close_tree(report, golden)


def test_baselines_json_matches_golden(capsys):
    status, out, _ = run(capsys, "baselines", "--csv", DATA / "homogeneous.csv", *PANEL_ARGS,
                         "--json")
    assert status == 0
    report = json.loads(out)
    golden = json.loads((GOLDEN / "baselines_report.json").read_text())
    assert_close_tree(report, golden)
    assert report["pesaran_p_value"] > 0.05


def test_report_files_written(capsys, table_file, tmp_path):
    status, _, _ = run(capsys, *test_cmd("heterogeneous.csv", "--quantile-table", table_file,
                                         "--out", tmp_path))
    assert status == 0
    report = json.loads((tmp_path / "report.json").read_text())
    rows = list(csv.DictReader((tmp_path / "path.csv").open()))
    assert [float(r["kappa"]) for r in rows] == report["path"]["kappa"]
    assert (tmp_path / "path.svg").read_text().lstrip().startswith("<?xml")


def test_schema_file_and_inline(capsys, table_file, tmp_path):
    schema = {"unit_column": "unit", "time_column": "time", "response_column": "y",
              "regressor_columns": ["x1", "x2"]}
    f = tmp_path / "schema.json"
    f.write_text(json.dumps(schema))
    outs = []
    for s in (f, json.dumps(schema)):
        status, out, _ = run(capsys, "test", "--csv", DATA / "homogeneous.csv", "--schema", s,
                             "--quantile-table", table_file, "--json")
        assert status == 0
        outs.append(json.loads(out)["w_stat"])
    assert outs[0] == outs[1]


def test_intercepts_flag(capsys, table_file):
    status, out, _ = run(capsys, *test_cmd("homogeneous.csv", "--intercepts", "--json",
                                           "--quantile-table", table_file))
    assert status == 0 and json.loads(out)["intercepts"] is True


def test_missing_table_without_flag(capsys, tmp_path):
    status, _, err = run(capsys, *test_cmd("homogeneous.csv", "--cache-dir", tmp_path))
    assert status == 5
    assert json.loads(err)["error"] == "QuantileTableMissing"


def test_simulate_quantiles_caches(capsys, tmp_path):
    args = test_cmd("homogeneous.csv", "--cache-dir", tmp_path, *SMALL_Q, "--json")
    status, first, _ = run(capsys, *args, "--simulate-quantiles")
    assert status == 0
    cached = list(tmp_path.glob("w_*.slq"))
    assert len(cached) == 1
    status, second, _ = run(capsys, *args)  # no flag needed once cached
    assert status == 0 and json.loads(first)["w_stat"] == json.loads(second)["w_stat"]


def test_measure_mismatch_exit_code(capsys, table_file):
    status, _, err = run(capsys, *test_cmd("homogeneous.csv", "--nu", "0.5,1.0",
                                           "--quantile-table", table_file))
    assert status == 5 and json.loads(err)["error"] == "MeasureMismatch"


def test_bad_measure_is_config_error(capsys, table_file):
    status, _, err = run(capsys, *test_cmd("homogeneous.csv", "--nu", "1.0:1",
                                           "--quantile-table", table_file))
    assert status == 2 and json.loads(err)["error"] == "InvalidMeasure"


def test_bad_delta_is_config_error(capsys, table_file):
    status, _, err = run(capsys, *test_cmd("homogeneous.csv", "--delta", "-1",
                                           "--quantile-table", table_file))
    assert status == 2 and json.loads(err)["error"] == "ConfigError"


def test_panel_error_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    lines = (DATA / "homogeneous.csv").read_text().splitlines()
    bad.write_text("\n".join(lines[:-1]) + "\n")
    status, _, err = run(capsys, "baselines", "--csv", bad, *PANEL_ARGS)
    assert status == 3 and json.loads(err)["error"] == "MissingCell"


def test_single_unit_baselines(capsys):
    status, out, _ = run(capsys, "baselines", "--csv", DATA / "single_unit.csv", *PANEL_ARGS,
                         "--json")
    assert status == 0
    assert abs(json.loads(out)["swamy"]) <= 1e-20


def test_noiseless_baselines_zero_residual(capsys):
    status, _, err = run(capsys, "baselines", "--csv", DATA / "noiseless.csv", *PANEL_ARGS)
    assert status == 4
    assert json.loads(err)["error"] == "ZeroResidual"


def test_quantiles_same_seed_same_file(capsys, tmp_path):
    digests = []
    for name in ("a.slq", "b.slq"):
        status, out, _ = run(capsys, "quantiles", *SMALL_Q, "--out", tmp_path / name, "--json")
        assert status == 0
        digests.append(json.loads(out)["sha256"])
    assert digests[0] == digests[1]
    assert (tmp_path / "a.slq").read_bytes() == (tmp_path / "b.slq").read_bytes()
    assert load_table(tmp_path / "a.slq").n_paths == 16384


def test_quantiles_report(capsys, tmp_path):
    status, out, _ = run(capsys, "quantiles", *SMALL_Q, "--alphas", "0.1,0.05",
                         "--out", tmp_path / "q.slq")
    assert status == 0
    assert "q_0.95" in out and "q_0.9" in out


def test_tiny_simulate(capsys, tmp_path, table_file):
    start = time.perf_counter()
    status, _, _ = run(capsys, "simulate", "-N", 10, "-T", 20, "--reps", 50,
                       "--eps-grid=-0.1,0,0.1,0.3", "--quantile-table", table_file,
                       "--out", tmp_path / "a")
    assert time.perf_counter() - start < 60
    assert status == 0
    rows = list(csv.DictReader((tmp_path / "a" / "power.csv").open()))
    assert len(rows) == 4
    assert (tmp_path / "a" / "power.svg").exists()
    manifest = json.loads((tmp_path / "a" / "power_manifest.json").read_text())
    assert manifest["n_reps"] == 50
    run(capsys, "simulate", "-N", 10, "-T", 20, "--reps", 50, "--eps-grid=-0.1,0,0.1,0.3",
        "--quantile-table", table_file, "--out", tmp_path / "b", "--no-plot")
    assert (tmp_path / "a" / "power.csv").read_bytes() == (tmp_path / "b" / "power.csv").read_bytes()


def test_tiny_mse_study(capsys, tmp_path):
    status, out, _ = run(capsys, "mse-study", "-N", 10, "-T", 20, "--reps", 20,
                         "--r2-grid", "0,0.05,0.1", "--out", tmp_path, "--json")
    assert status == 0
    assert len(json.loads(out)["rows"]) == 3
    assert len(list(csv.DictReader((tmp_path / "mse.csv").open()))) == 3
    assert (tmp_path / "mse.svg").exists()


def test_log_transform_flag(capsys, tmp_path, table_file):
    schema = PanelSchema("unit", "time", "y", ("x1", "x2"))
    panel = load_panel_csv(DATA / "homogeneous.csv", schema)
    assert panel.y.min() < 0
    status, _, err = run(capsys, "baselines", "--csv", DATA / "homogeneous.csv", *PANEL_ARGS,
                         "--log")
    assert status == 3 and json.loads(err)["error"] == "NonPositiveValue"


@pytest.mark.skipif(shutil.which("slopehom") is None, reason="console script not installed")
def test_console_script_version():
    out = subprocess.run(["slopehom", "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "slopehom.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "quantiles" in out.stdout
