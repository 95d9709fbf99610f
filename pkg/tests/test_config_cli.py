import csv
import os

import numpy as np
import pytest

from gmmexplore.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from gmmexplore.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from gmmexplore.occupancy import load_grid


# ---------------------------------------------------------------- config


def test_defaults():
    cfg = parse_config("", environ={})
    assert cfg == RunConfig()
    t = cfg.trial_config()
    assert t.mode == "mcg" and t.duration == 300.0 and t.gate.mode == "full_360"


def test_parse_values():
    text = """
[trial]
mode = og
sensor = depth
duration = 42.5   # seconds
local_dims = 50, 50, 20
noise = false
[planner]
c = 0.5
[gating]
overlap_threshold = 0.6
"""
    cfg = parse_config(text, environ={})
    assert cfg.trial.mode == "og" and cfg.trial.duration == 42.5
    assert cfg.trial.local_dims == (50, 50, 20) and cfg.trial.noise is False
    assert cfg.planner.c == 0.5
    tc = cfg.trial_config()
    assert tc.gate.mode == "limited_fov" and tc.gate.overlap_threshold == 0.6


def test_unknown_key_reports_line():
    text = "[trial]\nmode = og\n\n[planner]\nfoo = 1\n"
    with pytest.raises(ConfigError, match=r"cfg.ini:5: \[planner\] foo: unknown key"):
        parse_config(text, source="cfg.ini", environ={})


def test_unknown_section_and_bad_value():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[nope]\nx = 1\n", environ={})
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("[trial]\nduration = soon\n", environ={})
    with pytest.raises(ConfigError, match="expected 3 values"):
        parse_config("[trial]\nlocal_dims = 1, 2\n", environ={})


def test_cross_field_validation():
    with pytest.raises(ConfigError):
        parse_config("[trial]\nmode = both\n", environ={})
    with pytest.raises(ConfigError):
        parse_config("[trial]\nresample_density = -1\n", environ={})


def test_environment_overrides():
    env = {"GMMX_TRIAL_DURATION": "7", "GMMX_PLANNER_C": "2.5", "PATH": "/bin"}
    cfg = parse_config("[trial]\nduration = 100\n", environ=env)
    assert cfg.trial.duration == 7.0 and cfg.planner.c == 2.5
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("", environ={"GMMX_TRIAL_SPEED": "1"})
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("", environ={"GMMX_ROBOT_SPEED": "1"})


def test_dump_parse_roundtrip():
    cfg = parse_config("[trial]\nsensor = depth\nduration = 0.1\n[planner]\nk = 3\n", environ={})
    assert parse_config(dump_config(cfg), environ={}) == cfg


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "none.ini"), environ={})


# ---------------------------------------------------------------- cli


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("GMMX_"):
            monkeypatch.delenv(k)


def test_cli_run_and_reconstruct(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["run", "--mode", "mcg", "--sensor", "lidar", "--duration", "3", "--seed", "1",
               "--out", str(out), "--save-grids"])
    assert rc == EXIT_OK
    for name in ("metrics.csv", "keyframes.gmk", "keyframes.csv", "config.ini", "referee.npz", "oracle.npz"):
        assert (out / name).exists()
    assert load_config(str(out / "config.ini"), environ={}).trial.duration == 3.0

    xyz = tmp_path / "pts.xyz"
    rc = main(["reconstruct", str(out / "keyframes.gmk"), "--n-samples", "500", "--out", str(xyz),
               "--grid-out", str(tmp_path / "g.npz"), "--reference", str(out / "oracle.npz")])
    assert rc == EXIT_OK
    assert np.loadtxt(xyz).shape == (500, 3)
    assert "tri-state agreement" in capsys.readouterr().out
    ref = load_grid(out / "oracle.npz")
    rec = load_grid(tmp_path / "g.npz")
    assert rec.dims == ref.dims


def test_cli_dump_config(capsys):
    assert main(["run", "--sensor", "depth", "--dump-config"]) == EXIT_OK
    text = capsys.readouterr().out
    assert parse_config(text, environ={}).trial.sensor == "depth"


def test_cli_compare_and_report(tmp_path):
    out = tmp_path / "cmp"
    rc = main(["compare", "--sensor", "depth", "--duration", "2", "--seeds", "0,1", "--out", str(out)])
    assert rc == EXIT_OK
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["mcg", "og"]
    assert all(int(r["trials"]) == 2 for r in rows)
    assert (out / "depth_og_s1" / "changesets.csv").exists()
    rep = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(rep)]) == EXIT_OK
    assert sorted(p.suffix for p in rep.iterdir()).count(".svg") >= 2


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[trial]\nwhat = 1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "bad.ini:2" in capsys.readouterr().err
    assert main(["compare", "--modes", "mcg,xyz", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["reconstruct", "x.gmk", "--n-samples", "-1"]) == EXIT_CONFIG


def test_cli_data_errors(tmp_path):
    garbage = tmp_path / "g.gmk"
    garbage.write_bytes(b"not a keyframe stream")
    assert main(["reconstruct", str(garbage), "--out", str(tmp_path / "x.xyz")]) == EXIT_DATA
    assert main(["reconstruct", str(tmp_path / "missing.gmk")]) == EXIT_DATA
    assert main(["report", str(tmp_path / "empty_dir_none")]) == EXIT_DATA
    bad_csv = tmp_path / "m.csv"
    bad_csv.write_text("a,b\n1,2\n")
    assert main(["report", str(bad_csv), "--out", str(tmp_path / "r")]) == EXIT_DATA
    mesh = tmp_path / "bad.ply"
    mesh.write_text("ply\nformat ascii 1.0\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[environment]\nmesh = {mesh}\n")
    assert main(["run", "--config", str(cfg), "--duration", "1", "--out", str(tmp_path / "o")]) == EXIT_DATA
