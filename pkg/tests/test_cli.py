import json

import numpy as np
import pytest

from sempi import cli, desk
from sempi.errors import NonConvergenceError
from sempi.mesh import write_msh

CONFIG = """
[run]
schema = 1
name = tiny
[mesh]
path = tiny.msh
order = 1
[environment]
depth = 3.0
[symmetry]
planes = x, y
[radiation]
modes = 1, 3, 5
s = 0.5
[diffraction]
modes = 3
heading_deg = 150
s = 0.5
[damping.1]
kind = rect
start = 2.0
end = 4.0
[time]
duration = 4.0
extend = false
[output]
omega_points = 20
length_scale = 1.0
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    mesh = desk.box_body_tank(n_body=1, n_out=2, nz_body=1, nz_below=1)
    (d / "tiny.msh").write_text(write_msh(mesh))
    (d / "tiny.ini").write_text(CONFIG)
    return d


def test_run_is_deterministic(workdir, capsys):
    outs = []
    for name, threads in (("a", "1"), ("b", "2")):
        rc = cli.main(["run", "--config", str(workdir / "tiny.ini"),
                       "--output-dir", str(workdir / name), "--threads", threads])
        assert rc == cli.EXIT_OK
        outs.append(workdir / name)
    files = sorted(p.name for p in outs[0].iterdir())
    assert {"radiation.csv", "a_inf.csv", "excitation.csv", "manifest.json",
            "plot_data.jsonl", "radiation_nondim.csv"} <= set(files)
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    head = (outs[0] / "excitation.csv").read_text().splitlines()[0].split(",")
    assert {"ReXs_3", "ImXs_3", "ReX0_3", "ImX0_3"} <= set(head)
    rad = (outs[0] / "radiation.csv").read_text().splitlines()[0].split(",")
    assert {"a_11", "a_15", "a_51", "a_33", "b_55"} <= set(rad) and "a_13" not in rad
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["order"] == 1 and len(man["problems"]) == 4
    assert all(p["dt"] > 0 and p["n_steps"] > 0 for p in man["problems"])
    assert "radiation_omega_limit" in man and "versions" in man
    for line in (outs[0] / "plot_data.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert len(rec["values"]) == 20


def test_config_errors_exit_2(workdir, capsys):
    bad = workdir / "bad.ini"
    bad.write_text(CONFIG.replace("planes = x, y", "planes = symz"))
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "symz" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(workdir / "missing.ini")]) == cli.EXIT_CONFIG
    assert cli.main(["run"]) == cli.EXIT_CONFIG


def test_scheduling_fails_before_solving(workdir, monkeypatch):
    import dataclasses
    from sempi.config import load_config
    from sempi.errors import ParityError
    from sempi.sim import Mode
    cfg = load_config(workdir / "tiny.ini")
    cfg = dataclasses.replace(cfg, diffraction_modes=(3, 9))
    with pytest.raises(ParityError):
        cli.plan_run(cfg, {3: Mode(3), 9: Mode(9, "body", 1.0, None)})
    plan = cli.plan_run(load_config(workdir / "tiny.ini"), {k: Mode(k) for k in (1, 3, 5)})
    assert [b.label for b in plan.blocks] == ["SS"] and plan.radiation == (1, 3, 5)
    bad = workdir / "noparity.ini"
    bad.write_text(CONFIG.replace("modes = 3\nheading", "modes = 3, 8\nheading"))
    calls = []
    monkeypatch.setattr(cli, "simulate", lambda *a, **k: calls.append(a))
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert not calls


def test_numerical_failure_exit_3(workdir, monkeypatch, capsys):
    def boom(*a, **k):
        raise NonConvergenceError("no convergence", best=None, history=[1.0])
    monkeypatch.setattr(cli, "simulate", boom)
    rc = cli.main(["run", "--config", str(workdir / "tiny.ini"), "--output-dir",
                   str(workdir / "fail")])
    assert rc == cli.EXIT_NUMERICAL
    assert "radiation k=1" in capsys.readouterr().err


def test_inspect_and_impulse(workdir, capsys):
    assert cli.main(["inspect-mesh", str(workdir / "tiny.msh")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["bounds"]["max"][2] == 0.0 and "min_free_surface_spacing" in info
    assert cli.main(["impulse-diagnose", "--s", "0.4", "--depth", "5",
                     "--mesh", str(workdir / "tiny.msh"), "--order", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    lo, hi = out["velocity"]["omega_limit"]
    assert lo < 2 * np.pi * 0.4 < hi and out["t0"] == pytest.approx(2.4151, abs=1e-3)
    assert out["dt_at_cfl_1"] == pytest.approx(out["dx_min"] / np.sqrt(9.81 * 5))


def test_mms_and_sweeps(tmp_path, capsys):
    assert cli.main(["mms", "--orders", "2", "--n", "1"]) == 0
    assert "error" in capsys.readouterr().out
    assert cli.main(["p-sweep", "--orders", "1-3", "--n", "1",
                     "--output-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "p_sweep.csv").read_text().splitlines()) == 4
    assert cli.main(["h-sweep", "--orders", "1", "--levels", "1,2,4",
                     "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "h_sweep.csv").exists()


def test_desk_mesh(tmp_path, capsys):
    out = tmp_path / "tank.msh"
    assert cli.main(["desk-mesh", "tank", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["elements"] > 0
    assert cli.main(["inspect-mesh", str(out)]) == 0
