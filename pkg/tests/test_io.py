"""Tests for config parsing, manifests, and artifact round trips."""

from __future__ import annotations

import math

import numpy as np
import pytest

from fuzzwatch.dynamics import MeasurementConfig
from fuzzwatch.ensemble import DensityGrid, run_ensemble
from fuzzwatch.errors import ConfigurationError
from fuzzwatch.events import EventParams, run_event_trajectory
from fuzzwatch.io import (
    ConfigMap,
    Manifest,
    float_list,
    load_run_settings,
    load_setup,
    parse_config_file,
    read_density_csv,
    read_table_csv,
    write_density_csv,
    write_density_pgm,
    write_event_csv,
    write_records_csv,
    write_table_csv,
)
from fuzzwatch.scattering import ScatteringSetup


def manifest():
    return Manifest(subcommand="test", config_paths=("a.cfg",), master_seed=3,
                    out_dir="out", timestamp="2026-08-19T00:00:00+00:00")


# -- config parsing -----------------------------------------------------------


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# a comment line\n"
        "\n"
        "alpha = 1.5   # trailing comment\n"
        "beta= two words \n")
    assert parse_config_file(path) == {"alpha": "1.5", "beta": "two words"}


def test_parse_config_file_rejects_junk(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ConfigurationError):
        parse_config_file(path)
    path.write_text("a = 1\na = 2\n")
    with pytest.raises(ConfigurationError):
        parse_config_file(path)
    path.write_text("= 3\n")
    with pytest.raises(ConfigurationError):
        parse_config_file(path)
    with pytest.raises(ConfigurationError):
        parse_config_file(tmp_path / "missing.cfg")


def test_config_map_typing_and_leftovers():
    cm = ConfigMap({"x": "2.5", "y": "1"}, "f.cfg")
    assert cm.take_float("x") == 2.5
    assert cm.take_float("absent", 7.0) == 7.0
    with pytest.raises(ConfigurationError):
        cm.finish()
    cm = ConfigMap({"x": "abc"}, "f.cfg")
    with pytest.raises(ConfigurationError, match="'x'"):
        cm.take_float("x")


def test_load_run_settings_full(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "e1 = -0.5\ne2 = 0.5\nv0 = 3.14159265358979324\n"
        "pulse_start = 0.0\npulse_end = 0.5\nt1 = -0.25\nt2 = 0.75\n"
        "dt = 0.0025\nkappa = 7.5\n"
        "initial_c1 = 0.6+0j\ninitial_c2 = 0+0.8j\n"
        "prior_stddev = 2.0\nsmoothing_window = 0.3\n")
    settings = load_run_settings(path)
    cfg = settings.config
    assert cfg.kappa == 7.5
    assert cfg.initial_state == (0.6 + 0.0j, 0.8j)
    assert settings.smoothing_window == 0.3
    # partial prior override keeps the level-based defaults elsewhere
    assert settings.process.stddev == 2.0
    assert settings.process.mean == 0.0
    assert settings.process.correlation_time == pytest.approx(0.05)
    assert settings.process.bounds == (-3.0, 3.0)


def test_load_run_settings_defaults_and_ratio(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("fuzziness_ratio = 100.0\n")
    settings = load_run_settings(path)
    assert settings.process is None
    assert settings.smoothing_window is None
    assert settings.config.fuzziness_ratio == pytest.approx(100.0)
    assert settings.config.dt == MeasurementConfig().dt


def test_load_run_settings_rejections(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("kappa = 2.0\nfuzziness_ratio = 1.0\n")
    with pytest.raises(ConfigurationError):
        load_run_settings(path)
    path.write_text("initial_c1 = 1+0j\n")
    with pytest.raises(ConfigurationError):
        load_run_settings(path)
    path.write_text("kappa = -1\n")
    with pytest.raises(ConfigurationError, match="kappa"):
        load_run_settings(path)
    path.write_text("no_such_option = 3\n")
    with pytest.raises(ConfigurationError, match="no_such_option"):
        load_run_settings(path)


def test_load_setup(tmp_path):
    path = tmp_path / "beam.cfg"
    path.write_text(
        "d1 = 1e-29\nalpha1 = 0.0\nalpha2 = 0.0\nfield = 0.0\n"
        "electron_energy_ev = 1e-4\ndistance = 1e-8\nbeam_width = 1e-5\n"
        "collimation_length = 1e-4\nenergy_selectivity = 0.1\n"
        "electron_density = 1e13\n")
    setup = load_setup(path)
    oracle = ScatteringSetup.from_si(
        d1_cm=1e-29, alpha1_si=0.0, alpha2_si=0.0, field_v_per_m=0.0,
        electron_energy_ev=1e-4, distance_m=1e-8, beam_width_m=1e-5,
        collimation_length_m=1e-4, energy_selectivity=0.1,
        electron_density_per_m2=1e13)
    assert setup == oracle
    path.write_text("d1 = 1e-29\n")
    with pytest.raises(ConfigurationError, match="beam_width"):
        load_setup(path)


def test_packaged_example_configs_load():
    import pathlib

    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    settings = load_run_settings(root / "intermediate.cfg")
    assert settings.config.fuzziness_ratio == pytest.approx(5.0 / 3.0)
    assert settings.config.rabi_period == pytest.approx(1.0)
    for name in ("reference_point.cfg", "contrast_beam.cfg"):
        load_setup(root / name)


# -- manifests and generic tables ----------------------------------------------


def test_manifest_header_lines():
    lines = manifest().header_lines()
    assert lines[0].startswith("tool: fuzzwatch ")
    assert "subcommand: test" in lines
    assert "config: a.cfg" in lines
    assert "master_seed: 3" in lines
    assert any(l.startswith("timestamp: ") for l in lines)
    assert Manifest(subcommand="x", config_paths=(), master_seed=0,
                    out_dir=".").timestamp != ""


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40) * 10.0**rng.integers(-12, 12, 40)
    x[0] = math.inf
    flags = rng.random(40) < 0.5
    path = tmp_path / "table.csv"
    write_table_csv(path, manifest(), [
        ("x", x), ("flag", flags), ("idx", np.arange(40)),
        ("name", [f"row{i}" for i in range(40)]),
    ], extra_header=["units: none"], footer=["checksum = 1"])
    back = read_table_csv(path)
    assert list(back) == ["x", "flag", "idx", "name"]
    assert np.array_equal(back["x"], x)
    assert np.array_equal(back["flag"].astype(bool), flags)
    assert back["name"][3] == "row3"
    text = path.read_text()
    assert text.startswith("# tool: fuzzwatch")
    assert "# checksum = 1" in text


def test_density_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    grid = DensityGrid(field="readout",
                       t_edges=np.linspace(-0.25, 0.75, 11),
                       y_edges=np.linspace(-2.0, 2.0, 8),
                       mass=rng.random((7, 10)),
                       total_weight=12.75)
    path = tmp_path / "grid.csv"
    write_density_csv(path, manifest(), grid)
    back = read_density_csv(path)
    assert back.field == "readout"
    assert np.array_equal(back.t_edges, grid.t_edges)
    assert np.array_equal(back.y_edges, grid.y_edges)
    assert np.array_equal(back.mass, grid.mass)
    assert back.total_weight == grid.total_weight


def test_pgm_is_well_formed(tmp_path):
    rng = np.random.default_rng(2)
    grid = DensityGrid(field="population",
                       t_edges=np.linspace(0.0, 1.0, 13),
                       y_edges=np.linspace(0.0, 1.0, 10),
                       mass=rng.random((9, 12)),
                       total_weight=1.0)
    path = tmp_path / "grid.pgm"
    write_density_pgm(path, manifest(), grid)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n")
    head, _, rest = blob.partition(b"255\n")
    lines = [l for l in head.split(b"\n") if l and not l.startswith(b"#")]
    assert lines[-1] == b"12 9"
    assert len(rest) == 12 * 9
    pix = np.frombuffer(rest, dtype=np.uint8).reshape(9, 12)
    # column-normalized export: every time column peaks at white
    assert np.all(pix.max(axis=0) == 255)


def test_records_csv_round_trip(tmp_path):
    result = run_ensemble(MeasurementConfig(), n=24, master_seed=5)
    path = tmp_path / "records.csv"
    write_records_csv(path, manifest(), result)
    back = read_table_csv(path)
    assert np.array_equal(back["log_weight"], result.log_weights)
    assert np.array_equal(back["final_p2"], result.final_p2)
    assert set(back["readout_class"]) <= {"E11", "E12", "E21", "E22"}
    assert np.max(back["weight"]) == 1.0


def test_event_csv_round_trip(tmp_path):
    params = EventParams(d0=1.0, delta_d=0.05, sigma0=0.1, beam_width=1.0,
                         arrival_rate=300.0)
    traj = run_event_trajectory(MeasurementConfig(), params, master_seed=2)
    path = tmp_path / "events.csv"
    write_event_csv(path, manifest(), traj)
    back = read_table_csv(path)
    assert np.array_equal(back["time"], traj.event_times)
    assert np.array_equal(back["deflected"].astype(bool), traj.event_deflected)
    assert np.array_equal(back["p2_before"], traj.event_p2_before)
    assert np.array_equal(back["p2_after"], traj.event_p2_after)


def test_float_list():
    assert float_list("1, 2.5 ,inf", what="x") == [1.0, 2.5, math.inf]
    with pytest.raises(ConfigurationError):
        float_list("1,two", what="x")
    with pytest.raises(ConfigurationError):
        float_list("nan", what="x")
    with pytest.raises(ConfigurationError):
        float_list(" , ", what="x")
