import csv
import io

import pytest
from rich.console import Console

import spinboson
from reports import read_json, read_vector

SINGLE_MODE = """
[model]
lambda = 0.0
mu = 0.0

[discretization]
omega = 1.0
v = 1.0
n_max = 2
N_max = 2

[mc]
T = 2.0
samples = 400
chains = 2
seed = 5

[scan]
lambdas = 0.0, 0.1
horizons = 1.0, 2.0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SINGLE_MODE)
    return path


def run(*argv):
    return spinboson.main([str(a) for a in argv], console=Console(file=io.StringIO()))


def csv_rows(path):
    with open(path) as f:
        return list(csv.reader(line for line in f if not line.startswith("#")))


def test_ed_ground(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "ground", "--config", config_file, "--out", out, "--dump-vector") == 0
    payload = read_json(out / "ed_ground.json")
    assert payload["result"]["energy"] == pytest.approx(-1.0, abs=1e-12)
    assert payload["result"]["dimension"] == 6
    assert payload["command"] == "ed ground"
    assert len(payload["config_digest"]) == 16
    assert "wall_seconds" in payload["timings"]
    vector = read_vector(out / "ground_state.bin")
    assert vector.size == 6
    assert abs(vector[0]) == pytest.approx(1.0)


def test_overrides_change_the_digest(config_file, tmp_path):
    assert run("ed", "ground", "--config", config_file, "--out", tmp_path / "a") == 0
    assert run("ed", "ground", "--config", config_file, "--out", tmp_path / "b", "--set", "model.lambda=0.2") == 0
    a = read_json(tmp_path / "a" / "ed_ground.json")
    b = read_json(tmp_path / "b" / "ed_ground.json")
    assert a["config_digest"] != b["config_digest"]
    assert b["result"]["energy"] < a["result"]["energy"]


def test_unknown_key_exits_with_validation_code(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "ground", "--config", config_file, "--out", out, "--set", "model.kappa=1") == 1
    error = read_json(out / "error.json")["result"]["error"]
    assert error["reason"] == "config.unknown_key"
    assert error["exit_code"] == 1


def test_unknown_subcommand(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "excited", "--config", config_file, "--out", out) == 1
    assert read_json(out / "error.json")["result"]["error"]["reason"] == "cli.unknown_command"


def test_kernel_table_csv(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("kernel", "table", "--config", config_file, "--out", out) == 0
    rows = csv_rows(out / "kernel_table.csv")
    assert rows[0] == ["t", "W", "Phi", "V"]
    assert float(rows[1][0]) == 0.0
    assert float(rows[1][1]) == pytest.approx(0.25)
    summary = read_json(out / "kernel_summary.json")["result"]
    assert summary["l1_norm"] == pytest.approx(0.5, rel=1e-8)
    with open(out / "kernel_table.csv") as f:
        assert f.readline().startswith("# tool: spinboson")


def test_mc_partition_csv(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("mc", "partition", "--config", config_file, "--out", out, "--format", "csv", "--seed", 9,
               "--set", "model.lambda=0.2") == 0
    header, row = csv_rows(out / "mc_partition.csv")
    record = dict(zip(header, row))
    assert record["seed"] == "9"
    assert len(record["config_digest"]) == 16
    assert float(record["value"]) > 0.0


def test_scan_is_reproducible(config_file, tmp_path):
    for name, threads in (("one", 1), ("two", 2)):
        assert run("scan", "lambda", "--config", config_file, "--out", tmp_path / name, "--threads", threads) == 0
    one = csv_rows(tmp_path / "one" / "scan.csv")
    assert one[0] == ["lambda", "T", "chi", "chi_err", "l1_diag"]
    assert len(one) == 5
    assert one == csv_rows(tmp_path / "two" / "scan.csv")
    summary = read_json(tmp_path / "one" / "scan_summary.json")["result"]
    assert [s["lambda"] for s in summary["slopes"]] == [0.0, 0.1]


def test_semigroup_and_model_info(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "semigroup", "--config", config_file, "--out", out) == 0
    result = read_json(out / "ed_semigroup.json")["result"]
    assert result["bloch_energy"] == pytest.approx(-1.0, abs=1e-12)
    assert run("model", "info", "--config", config_file, "--out", out) == 0
    assert read_json(out / "model_info.json")["result"]["classification"] == "infrared-critical"


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        spinboson.main(["--version"])
    assert info.value.code == 0
    assert "spinboson" in capsys.readouterr().out


def test_fkn_crosscheck(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("xcheck", "fkn", "--config", config_file, "--out", out,
               "--set", "scan.lambdas=0.2", "--set", "scan.horizons=5.0", "--set", "mc.samples=8000",
               "--set", "discretization.n_max=8", "--set", "discretization.N_max=8") == 0
    header, row = csv_rows(out / "xcheck_fkn.csv")
    record = dict(zip(header, row))
    assert float(record["sigma"]) <= 3.0
    summary = read_json(out / "xcheck_fkn.json")["result"]
    assert summary["total"] == 1


def test_divergent_norms_are_written_as_strings(tmp_path):
    out = tmp_path / "out"
    assert run("model", "info", "--out", out, "--set", "model.dimension=1", "--set", "model.alpha=0.4") == 0
    text = (out / "model_info.json").read_text()
    assert "Infinity" not in text
    result = read_json(out / "model_info.json")["result"]
    assert result["norm_one_sq"] == "inf"
    assert result["critical_coupling"] is None
    assert result["classification"] == "infrared-critical"


def test_ed_susceptibility(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "susceptibility", "--config", config_file, "--out", out) == 0
    result = read_json(out / "ed_susceptibility.json")["result"]
    assert {"chi", "error", "richardson", "energy", "resolvent_passed", "resolvent"} <= set(result)
    assert result["chi"] == pytest.approx(1.0, abs=1e-4)
    assert result["energy"] == pytest.approx(-1.0, abs=1e-12)


def test_mc_energy(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("mc", "energy", "--config", config_file, "--out", out) == 0
    payload = read_json(out / "mc_energy.json")
    assert payload["command"] == "mc energy"
    result = payload["result"]
    assert {"value", "stderr", "seed", "config_digest", "T"} <= set(result)
    assert result["value"] == -1.0
    assert result["seed"] == 5


def test_mc_susceptibility(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("mc", "susceptibility", "--config", config_file, "--out", out) == 0
    result = read_json(out / "mc_susceptibility.json")["result"]
    assert {"value", "stderr", "tau_int", "n_eff", "diagnostics", "T"} <= set(result)
    assert 0.0 < result["value"] < 2.0
    assert 0.0 < result["diagnostics"]["acceptance"] <= 1.0
    assert len(result["diagnostics"]["shift_width"]) == 2


def test_ed_ladder(config_file, tmp_path):
    out = tmp_path / "out"
    assert run("ed", "ladder", "--config", config_file, "--out", out, "--set", "model.lambda=0.1",
               "--set", "discretization.n_modes=3", "--set", "discretization.ladder_masses=0.8,0.4") == 0
    header, *rows = csv_rows(out / "ed_ladder.csv")
    assert header[:3] == ["mass", "min_omega", "energy"]
    assert len(rows) == 2
    summary = read_json(out / "ed_ladder_summary.json")["result"]
    assert summary["monotone"] is True
    assert [r["mass"] for r in summary["rungs"]] == [0.8, 0.4]
