import json

import numpy as np
import pytest
import yaml

from qcsb import cli, config, io
from qcsb.dynamics import StiffnessError

FAST = {
    "model": {"spin_count": 2, "spin_gap": 10.0, "beta": 0.01, "bare_freq": 0.3},
    "numerics": {"fock_dim": 12, "t_end": 3.0, "sample_dt": 0.05},
    "initial": {"alpha": 0.5},
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


# config ------------------------------------------------------------------

def test_defaults_and_overrides():
    cfg = config.normalize({})
    assert cfg["model"]["spin_count"] == 8 and cfg["bath"]["gamma"] == 10.0
    cfg = config.normalize({"glass": {"freq_min": "1e5"}, "initial": {"alpha": [0.5, 0.25]}})
    assert cfg["glass"]["freq_min"] == 1e5
    assert config.alpha(cfg) == complex(0.5, 0.25)


@pytest.mark.parametrize("raw, field", [
    ({"model": {"spin_cnt": 3}}, "spin_cnt"),
    ({"modle": {}}, "modle"),
    ({"model": {"spin_count": 2.5}}, "model.spin_count"),
    ({"model": {"mass": True}}, "model.mass"),
    ({"numerics": {"tol": 0}}, "numerics.tol"),
    ({"bath": {"kind": "superohmic"}}, "bath.kind"),
    ({"sweep": {"axis": "beta"}}, "sweep.axis"),
    ({"schema": "qcsb-config/0"}, "schema"),
    ({"model": {"beta": -1.0}}, "beta"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(config.ConfigError, match=field):
        config.normalize(raw)


def test_load_rejects_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model: [unclosed\n")
    with pytest.raises(config.ConfigError, match="invalid YAML"):
        config.load(p)
    with pytest.raises(config.ConfigError, match="cannot read"):
        config.load(tmp_path / "missing.yaml")


# io ----------------------------------------------------------------------

def test_csv_roundtrip_and_schema_check(tmp_path):
    cols = {"a": [0.1, 1 / 3, float("nan")], "flag": ["", "x", "y|z"]}
    io.write_csv(tmp_path / "t.csv", "demo/1", cols)
    text = (tmp_path / "t.csv").read_text()
    assert text.startswith("# schema: demo/1\na,flag\n0.1,\n0.3333333333333333,x\n")
    back = io.read_csv(tmp_path / "t.csv", "demo/1")
    assert back["a"][1] == 1 / 3 and np.isnan(back["a"][2])
    assert back["flag"] == ["", "x", "y|z"]
    with pytest.raises(io.SchemaMismatch):
        io.read_csv(tmp_path / "t.csv", "demo/2")
    io.write_json(tmp_path / "t.json", "demo/1", {"v": np.float64(np.inf), "n": np.int64(3)})
    data = io.read_json(tmp_path / "t.json", "demo/1")
    assert data == {"schema": "demo/1", "v": None, "n": 3}
    with pytest.raises(io.SchemaMismatch):
        io.read_json(tmp_path / "t.json", "other/1")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


# simulate ----------------------------------------------------------------

def test_simulate_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", FAST)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("trajectory.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    traj = io.read_trajectory(tmp_path / "a" / "trajectory.csv")
    assert traj["t"][-1] == pytest.approx(3.0)
    summary = io.read_json(tmp_path / "a" / "summary.json", io.SUMMARY_SCHEMA)
    assert summary["config"]["model"]["spin_count"] == 2
    assert "slope_window_source" in summary["fits"]


def test_simulate_decoupled_has_no_dephasing(tmp_path):
    data = {**FAST, "model": {**FAST["model"], "coupling_freq": 0.0, "bare_freq": 1.0}}
    assert run("simulate", "--config", write_cfg(tmp_path / "c.yaml", data), "--out", tmp_path) == 0
    traj = io.read_trajectory(tmp_path / "trajectory.csv")
    assert np.max(np.abs(traj["impurity"])) <= 1e-8


def test_simulate_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"model": {"spin_count": 2, "gap": 1.0}})
    assert run("simulate", "--config", cfg, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "model: unknown key(s): gap" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()
    assert run("simulate", "--config", write_cfg(tmp_path / "d.yaml", FAST), "--tol", "-1",
               "--out", tmp_path) == cli.EXIT_CONFIG


def test_simulate_truncation_is_config_error(tmp_path):
    data = {**FAST, "numerics": {**FAST["numerics"], "fock_dim": 3}, "initial": {"alpha": 2.0}}
    assert run("simulate", "--config", write_cfg(tmp_path / "c.yaml", data), "--out", tmp_path) == cli.EXIT_CONFIG


def test_simulate_stiffness_writes_partial(tmp_path, monkeypatch):
    from qcsb import experiments

    real = experiments.run_trajectory

    def failing(*args, **kwargs):
        traj = real(*args, **kwargs)
        raise StiffnessError("step size underflow at t=3", traj)

    monkeypatch.setattr(experiments, "run_trajectory", failing)
    cfg = write_cfg(tmp_path / "c.yaml", FAST)
    assert run("simulate", "--config", cfg, "--out", tmp_path) == cli.EXIT_NUMERICAL
    assert (tmp_path / "trajectory.csv.partial").exists()
    assert not (tmp_path / "trajectory.csv").exists()


# sweep -------------------------------------------------------------------

def test_single_value_sweep_flags_degenerate_fit(tmp_path):
    data = {**FAST, "sweep": {"axis": "N", "values": [2]}}
    assert run("sweep", "--config", write_cfg(tmp_path / "c.yaml", data), "--out", tmp_path) == 0
    rows = io.read_csv(tmp_path / "sweep.csv", io.SWEEP_SCHEMA)
    assert list(rows["value"]) == [2.0]
    fits = io.read_json(tmp_path / "fits.json", io.SWEEP_SCHEMA)
    assert "error" in fits["fits"]["inv_kappa_vs_N"]


def test_sweep_records_failed_points(tmp_path):
    data = {**FAST, "sweep": {"axis": "omega", "values": [0.5, 2.0, 0.8], "bare_freq_rule": "complement"}}
    assert run("sweep", "--config", write_cfg(tmp_path / "c.yaml", data), "--out", tmp_path,
               "--threads", 2) == 0
    rows = io.read_csv(tmp_path / "sweep.csv", io.SWEEP_SCHEMA)
    assert rows["flag"][1] == "ValueError"
    assert np.isfinite(rows["R_S"][0]) and np.isnan(rows["R_S"][1])
    fits = io.read_json(tmp_path / "fits.json", io.SWEEP_SCHEMA)
    assert fits["failed_points"] == [2.0]


def test_sweep_requires_values(tmp_path):
    assert run("sweep", "--config", write_cfg(tmp_path / "c.yaml", FAST), "--out", tmp_path) == cli.EXIT_CONFIG


# thermo ------------------------------------------------------------------

def test_thermo_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"model": {"spin_gap": 10.0}, "thermo": {"force": 0.1}})
    assert run("thermo", "--config", cfg, "--out", tmp_path) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["thermo"]["omega_eff"] == pytest.approx(0.689219, abs=2e-6)
    assert io.read_json(tmp_path / "thermo.json", io.SUMMARY_SCHEMA) == printed


# glass-map ---------------------------------------------------------------

def test_glass_map_above_boundary_is_zero(tmp_path):
    data = {"glass": {"freq_min": 1e9, "freq_max": 1e10, "temp_min": 0.01, "temp_max": 0.5,
                      "n_freq": 4, "n_temp": 3}}
    assert run("glass-map", "--config", write_cfg(tmp_path / "g.yaml", data), "--out", tmp_path) == 0
    grid = io.read_csv(tmp_path / "rsgrid.csv", io.RSGRID_SCHEMA)
    assert len(grid["R_s"]) == 12 and np.all(grid["R_s"] == 0)
    b = io.read_csv(tmp_path / "boundary.csv", io.BOUNDARY_SCHEMA)
    assert b["T"][-1] == 0.5


def test_glass_map_material_file_and_failure(tmp_path, capsys):
    (tmp_path / "soft.yaml").write_text(
        "Pbar: 1.0e50\ngamma_L: 1.6\ngamma_T: 1.0\ngamma_unit: eV\nv_L: 5800\nv_T: 3750\nrho: 2200\n")
    data = {"glass": {"material_file": "soft.yaml", "freq_min": 1e3, "freq_max": 1e4,
                      "temp_min": 0.5, "temp_max": 1.0, "n_freq": 2, "n_temp": 2}}
    cfg = write_cfg(tmp_path / "g.yaml", data)
    assert run("glass-map", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_NUMERICAL
    assert capsys.readouterr().err.count("flagged cell") == 4
    data["glass"]["material_file"] = "nope.yaml"
    cfg = write_cfg(tmp_path / "g.yaml", data)
    assert run("glass-map", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG


# validate ----------------------------------------------------------------

@pytest.mark.slow
def test_validate_detects_gain_perturbation(tmp_path):
    fast = ("--spin-counts", "1", "--t-end", "5")
    assert run("validate", *fast, "--out", tmp_path) == 0
    report = io.read_json(tmp_path / "validation.json", io.VALIDATION_SCHEMA)
    assert report["passed"] and not report["failed"]
    assert run("validate", *fast, "--gain-scale", "1.01") == cli.EXIT_VALIDATION
