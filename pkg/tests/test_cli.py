import json
import subprocess
import sys
import time

import numpy as np
import pytest

from doubleodd import __version__, cli
from doubleodd.errors import ConfigError, InvalidArgument
from doubleodd.field import TorusGrid, VorticityField, write_field

SMOKE = """[grid]
n = 128
[time]
dt = 0.005
t_end = 0.1
"""


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    ini = root / "smoke.ini"
    ini.write_text(SMOKE)
    start = time.perf_counter()
    code = cli.main(["run", str(ini), "--output", str(root / "a")])
    return root, code, time.perf_counter() - start


@pytest.mark.parametrize("bad", [
    {"n": 100}, {"n": 8}, {"delta1": 0.2, "delta2": 0.15}, {"alpha": 0.3}, {"dt": 0.0},
    {"scheme": "leapfrog"}, {"initial": "gaussian"}, {"initial": "bump", "m_target": 1.0},
    {"initial": "file"}, {"feeding_R": "-1"}, {"feeding_R": "big"}, {"tracer_layout": "ring"},
    {"tracer_count": 0}, {"observe_every": 0}, {"checks": ("envelope", "vibes")},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        cli.ScenarioConfig(**bad)


def test_config_file_errors(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[grid]\nn = 128\n[extras]\nx = 1\n")
    with pytest.raises(ConfigError):
        cli.ScenarioConfig.load(p)
    p.write_text("[grid]\nsize = 128\n")
    with pytest.raises(ConfigError):
        cli.ScenarioConfig.load(p)
    p.write_text("[grid]\nn = 128.5\n")
    with pytest.raises(ConfigError):
        cli.ScenarioConfig.load(p)
    with pytest.raises(ConfigError):
        cli.ScenarioConfig.from_dict({"colour": "red"})


def test_config_round_trips(tmp_path):
    cfg = cli.ScenarioConfig(n=256, scheme="semi-lagrangian", initial="bump", m_target=0.7,
                             gammas=(0.4, 0.3, 0.7), checks=("envelope", "feeding"), feeding_R="3.5")
    p = tmp_path / "c.ini"
    p.write_text(cfg.to_ini())
    assert cli.ScenarioConfig.load(p) == cfg
    j = tmp_path / "m.json"
    j.write_text(json.dumps({"scenario": cfg.to_dict()}))
    assert cli.ScenarioConfig.load(j) == cfg


def test_bump_profile():
    s = np.linspace(-3, 3, 6001)
    p = cli.bump_profile(s, 0.64)
    assert np.allclose(cli.bump_profile(-s, 0.64), -p)
    assert np.allclose(cli.bump_profile(s + 2, 0.64), p)
    c0 = 0.5 * (1 - 0.8)
    inner = (s > c0) & (s < 1 - c0)
    assert np.all(p[inner] == 1) and np.all(np.abs(p) <= 1)
    assert cli.bump_profile(0.0, 0.64) == 0 and cli.bump_profile(1.0, 0.64) == 0
    u = np.array([0.0, 1.0])
    assert list(cli.smoothstep7(u)) == [0, 1]
    # C^3 ramp: first three derivatives vanish at both ends
    eps = 1e-3
    assert cli.smoothstep7(eps) < 1e-10 and 1 - cli.smoothstep7(1 - eps) < 1e-10
    with pytest.raises(InvalidArgument):
        cli.bump_profile(s, 0.64, width=0.2)
    with pytest.raises(InvalidArgument):
        cli.bump_profile(s, 1.2)


def test_build_initial_from_file(tmp_path):
    g = TorusGrid(64)
    f = VorticityField.from_function(g, lambda a, b: np.sin(np.pi * a) * np.sin(2 * np.pi * b))
    path = write_field(f, tmp_path / "w.bin")
    got = cli.build_initial(cli.ScenarioConfig(n=64, initial="file", initial_path=str(path)))
    assert np.array_equal(got.values, f.values)
    with pytest.raises(ConfigError):
        cli.build_initial(cli.ScenarioConfig(n=128, initial="file", initial_path=str(path)))


def test_smoke_run(smoke_run):
    root, code, seconds = smoke_run
    out = root / "a"
    assert code == 0 and seconds < 60
    for name in ("diagnostics.csv", "fits.json", "manifest.json", "checks.json", "trajectories.json"):
        assert (out / name).exists()
    checks = json.loads((out / "checks.json").read_text())
    assert all(c["passed"] for c in checks.values() if c["enabled"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__ and manifest["scenario"]["n"] == 128
    assert len(list(out.glob("trajectory_*.csv"))) == 4


def test_determinism_and_manifest_rerun(smoke_run):
    root, _, _ = smoke_run
    assert cli.main(["run", str(root / "smoke.ini"), "--output", str(root / "b")]) == 0
    first = (root / "a" / "diagnostics.csv").read_bytes()
    assert (root / "b" / "diagnostics.csv").read_bytes() == first
    assert cli.main(["run", str(root / "a" / "manifest.json"), "--output", str(root / "c")]) == 0
    assert (root / "c" / "diagnostics.csv").read_bytes() == first


def test_check_subcommand(smoke_run, capsys):
    root, _, _ = smoke_run
    assert cli.main(["check", str(root / "a")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["xi_bounds"]["passed"]
    assert cli.main(["check", str(root / "a"), "--R", "1e-9"]) == 1


def test_set_overrides_and_errors(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text(SMOKE)
    assert cli.main(["run", str(ini), "--set", "delta2=0.1", "--output", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert cli.main(["run", str(ini), "--set", "nokeyvalue"]) == 2
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 3


def test_sweep_subcommand(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text(SMOKE)
    out = tmp_path / "sweep.json"
    code = cli.main(["sweep", str(ini), "--json", str(out)])
    rep = json.loads(out.read_text())
    assert [p["delta2"] for p in rep["sweep"]] == [0.04, 0.02, 0.01]
    assert rep["sweep"][0]["delta1"] == pytest.approx(0.0016)
    assert code == (0 if rep["stable"] else 1)
    names = {"q_upper", "c_bound", "b_bound", "x1_dq1_bound", "x2_dq2_bound"}
    assert set(json.loads(capsys.readouterr().out)) == names


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "doubleodd", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == __version__


def test_path_integrals_refined_to_halving_tolerance(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(SMOKE)
    out = tmp_path / "o"
    assert cli.main(["run", str(ini), "--set", "tracer_layout=grid", "--set", "t_end=0.3", "--output", str(out)]) == 0
    rows = json.loads((out / "trajectories.json").read_text())
    entered = [r for r in rows if "halving_difference" in r]
    assert entered
    assert all(r["halving_difference"] <= cli.HALVING_TOL for r in entered)


def test_converged_path_stops_at_once_for_constant_flow():
    from doubleodd import trajectories as tr
    box = tr.BoxGeometry(0.1, 0.2, 0.15, 0.2)
    series = tr.AffineSeries(1.0, 1.0)
    traj = tr.trace(series, (0.05, 0.02), box)
    coeffs, xi0, data, spacing = cli.converged_path(traj, series, box)
    assert spacing == 2e-3 and data.halving_difference <= cli.HALVING_TOL
