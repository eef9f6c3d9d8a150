import json
import math
import os

import numpy as np
import pytest

from stratlayer.boundary_layer import BLState, random_state, run_linear_bl, step_linear_bl
from stratlayer.bulk import propagate, wall_forced_state
from stratlayer.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, main
from stratlayer.config import OUTPUT_ROOT_ENV, config_from_mapping, load_config, parse_override, with_overrides
from stratlayer.errors import ConfigError, SnapshotError
from stratlayer.grids import GridSpec
from stratlayer.snapshot import load_snapshot, save_snapshot

SMALL = """
[run]
study = {study}

[grid]
Nx = 8
Ny = 8
Nz = 17
Neta = 65
L_eta = 8

[physics]
T = 0.05
eps = 0.1

[norms]
C_d = 1e-3
M = 6

[init]
profile = {profile}
"""


def write_config(tmp_path, study="linear-bl", profile="mode", extra=""):
    path = tmp_path / f"{study}.ini"
    path.write_text(SMALL.format(study=study, profile=profile) + extra)
    return str(path)


def run_cli(tmp_path, *args):
    return main(["run", *args])


def test_config_types_and_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path), ["physics.dt=auto", "grid.Neta=33", "physics.eps_list=0.4, 0.2 0.1"])
    assert cfg.grid.Neta == 33 and cfg.grid.L_eta == 8.0
    assert cfg.physics.dt is None
    assert cfg.physics.eps_list == (0.4, 0.2, 0.1)
    assert cfg.norms.M == 6 and isinstance(cfg.norms.M, int)


@pytest.mark.parametrize(
    "mapping, match",
    [
        ({"grid": {"Nx": "8"}}, "study is required"),
        ({"run": {"study": "weather"}}, "run.study"),
        ({"run": {"study": "norms"}, "grid": {"Nx": "seven"}}, "grid.Nx"),
        ({"run": {"study": "norms"}, "physics": {"T": "-1"}}, "physics.T"),
        ({"run": {"study": "norms"}, "physics": {"eps": "0"}}, "eps"),
        ({"run": {"study": "norms"}, "extra": {}}, "unknown section"),
        ({"run": {"study": "norms"}, "init": {"profile": "snapshot"}}, "init.path"),
        ({"run": {"study": "scaling-sweep"}, "physics": {"eps_list": "0.1 0.2"}}, "eps_list"),
    ],
)
def test_invalid_configs(mapping, match):
    with pytest.raises(ConfigError, match=match):
        config_from_mapping(mapping)


def test_override_syntax():
    assert parse_override("grid.Neta=128") == ("grid", "Neta", "128")
    with pytest.raises(ConfigError):
        parse_override("Neta=128")
    with pytest.raises(ConfigError):
        parse_override("grid.Neta")


def test_output_root_env(tmp_path):
    cfg = config_from_mapping({"run": {"study": "norms"}, "output": {"dir": "runs/a"}})
    assert cfg.output_dir({OUTPUT_ROOT_ENV: str(tmp_path)}) == os.path.join(str(tmp_path), "runs/a")
    assert cfg.output_dir({}) == "runs/a"
    absolute = with_overrides(cfg, output={"dir": str(tmp_path / "x")})
    assert absolute.output_dir({OUTPUT_ROOT_ENV: "/elsewhere"}) == str(tmp_path / "x")


def test_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.ini")]) == EXIT_IO
    capsys.readouterr()
    (tmp_path / "bad.ini").write_text("[run]\nstudy = norms\n[grid]\nNx = 5\n")
    assert main(["run", str(tmp_path / "bad.ini")]) == EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "Nx" in err[0]
    diverge = write_config(tmp_path, study="picard")
    code = main(["run", diverge, "--set", "physics.T=0.03", "--set", "norms.max_iter=1", "--set", "norms.tol=1e-30", "--output", str(tmp_path / "d")])
    assert code == EXIT_DIVERGENCE


def test_zero_bulk_run_writes_zero_series(tmp_path):
    cfg = write_config(tmp_path, study="linear-bulk", profile="zero")
    out = tmp_path / "bulk"
    assert main(["run", cfg, "--set", "physics.dt=0.01", "--output", str(out)]) == EXIT_OK
    lines = (out / "timeseries.csv").read_text().splitlines()
    assert lines[0].startswith("t,energy")
    assert len(lines) == 7
    for line in lines[1:]:
        assert all(float(v) == 0.0 for v in line.split(",")[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["grid"]["Nz"] == 17
    assert "energy" in manifest["columns"]["timeseries"]["columns"]
    assert len(list((out / "snapshots").iterdir())) == 6


def test_inequalities_report(tmp_path):
    cfg = write_config(tmp_path, study="inequalities")
    out = tmp_path / "ineq"
    assert main(["run", cfg, "--set", "norms.m_max=200", "--set", "norms.r=2", "--output", str(out)]) == EXIT_OK
    report = json.loads((out / "inequalities.json").read_text())
    sups = [s["sup"] for s in report["scans"]]
    assert len(sups) == 4 and all(math.isfinite(s) and s > 0 for s in sups)


def test_scaling_sweep_slopes(tmp_path):
    cfg = write_config(tmp_path, study="scaling-sweep", profile="wall-forced")
    out = tmp_path / "scal"
    assert main(["run", cfg, "--set", "grid.Nz=33", "--output", str(out)]) == EXIT_OK
    slopes = json.loads((out / "scaling.json").read_text())["slopes"]
    assert slopes["dzz_w"] == pytest.approx(-1, abs=0.05)
    assert slopes["dzz_theta"] == pytest.approx(-2, abs=0.05)
    assert slopes["dz_v"] == pytest.approx(-1, abs=0.05)


@pytest.mark.parametrize("study", ["linear-bl", "picard", "norms"])
def test_outputs_are_byte_identical(tmp_path, study):
    cfg = write_config(tmp_path, study=study)
    a, b = tmp_path / "a", tmp_path / "b"
    with pytest.warns(RuntimeWarning) if study == "norms" else _nothing():
        assert main(["run", cfg, "--output", str(a)]) == EXIT_OK
        assert main(["run", cfg, "--output", str(b)]) == EXIT_OK
    names = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".json"))
    assert names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()


class _nothing:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


SPEC = GridSpec(Nx=8, Ny=8, Nz=17, Neta=33, L_eta=6.0)


def test_snapshot_round_trip_bitwise(tmp_path):
    s = random_state(SPEC, np.random.default_rng(1))
    s.t = 0.37
    path = save_snapshot(s, tmp_path / "s.npz")
    back = load_snapshot(path, expected=SPEC)
    assert isinstance(back, BLState) and back.spec == SPEC and back.t == 0.37
    assert np.array_equal(back.v, s.v) and np.array_equal(back.theta, s.theta)
    b = wall_forced_state(SPEC, 0.2)
    back = load_snapshot(save_snapshot(b, tmp_path / "b.npz"))
    assert back.eps == 0.2
    for name in ("v", "w", "theta"):
        assert np.array_equal(getattr(back, name), getattr(b, name))


def test_snapshot_grid_mismatch_names_field(tmp_path):
    path = save_snapshot(random_state(SPEC, np.random.default_rng(2)), tmp_path / "s.npz")
    with pytest.raises(SnapshotError, match="Neta"):
        load_snapshot(path, expected=SPEC.with_(Neta=65, L_eta=12.0))
    with pytest.raises(SnapshotError, match="BulkState"):
        load_snapshot(path, kind="BulkState")


def test_corrupt_snapshot(tmp_path):
    p = tmp_path / "junk.npz"
    p.write_bytes(b"not a zip")
    with pytest.raises(SnapshotError):
        load_snapshot(p)
    np.savez(tmp_path / "partial.npz", v=np.zeros(3))
    with pytest.raises(SnapshotError, match="missing field"):
        load_snapshot(tmp_path / "partial.npz")


def test_restart_equivalence(tmp_path):
    s = random_state(SPEC, np.random.default_rng(4))
    dt = 1e-2
    full = run_linear_bl(s, dt, 0.2).final()
    half = run_linear_bl(s, dt, 0.1).final()
    resumed = load_snapshot(save_snapshot(half, tmp_path / "h.npz"), expected=SPEC)
    rest = run_linear_bl(resumed, dt, 0.1).final()
    np.testing.assert_allclose(rest.compressed(), full.compressed(), rtol=0, atol=1e-13 * np.abs(full.compressed()).max())
    b = wall_forced_state(SPEC, 0.1)
    mid = load_snapshot(save_snapshot(propagate(b, 0.3), tmp_path / "b.npz"))
    np.testing.assert_allclose(propagate(mid, 0.7).theta, propagate(b, 0.7).theta, atol=1e-11)


def test_restart_from_snapshot_via_cli(tmp_path):
    s = random_state(SPEC, np.random.default_rng(5))
    save_snapshot(s, tmp_path / "init.npz")
    text = (
        "[run]\nstudy = linear-bl\n[grid]\nNx = 8\nNy = 8\nNz = 17\nNeta = 33\nL_eta = 6\n"
        f"[physics]\nT = 0.02\ndt = 0.01\n[init]\nprofile = snapshot\npath = {tmp_path / 'init.npz'}\n"
    )
    (tmp_path / "c.ini").write_text(text)
    assert main(["run", str(tmp_path / "c.ini"), "--output", str(tmp_path / "o")]) == EXIT_OK
    final = load_snapshot(tmp_path / "o" / "snapshots" / "layer_000002.npz")
    expected = step_linear_bl(step_linear_bl(s, 0.01), 0.01)
    assert np.array_equal(final.compressed(), expected.compressed())
    assert main(["run", str(tmp_path / "c.ini"), "--set", "grid.Neta=65", "--output", str(tmp_path / "p")]) == EXIT_IO
