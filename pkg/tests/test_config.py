from pathlib import Path

import numpy as np
import pytest

from sempi import desk
from sempi.config import NormalExpression, check_against_mesh, load_config, parse_config
from sempi.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[run]
schema = 1
name = t
[mesh]
path = m.msh
order = 2
[environment]
depth = 3.0
[symmetry]
planes = x, y
[radiation]
modes = 3
s = 0.5
"""


def parse(extra="", base=BASE):
    return parse_config(base + extra, Path("/tmp"))


def test_minimal():
    cfg = parse()
    assert cfg.planes == ("x", "y") and list(cfg.radiation_modes) == [3]
    assert cfg.order == 2 and cfg.depth == 3.0 and cfg.g == 9.81 and cfg.rho == 1000.0
    assert cfg.duration is None and cfg.cfl == 1.0 and cfg.omega_points == 400
    assert cfg.mesh_path == Path("/tmp/m.msh")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.mesh_path.exists()


def test_sphere_case_values():
    cfg = load_config(CONFIGS / "sphere_r5.ini")
    assert (cfg.depth, cfg.order, tuple(cfg.radiation_modes)) == (25.0, 3, (3,))
    assert cfg.length_scale == 5.0


def test_owc_modes():
    cfg = load_config(CONFIGS / "moonpool.ini")
    assert sorted(cfg.modes) == [7, 8]
    m8 = cfg.modes[8]
    assert m8.surface == "special1" and m8.parity == {"x": "even", "y": "odd"}
    pts = np.array([[0.5, 0.0, 0.0], [-0.5, 0.2, 0.0]])
    assert np.allclose(m8.normal(pts, np.zeros_like(pts)), [1.0, -1.0])


def test_symz_plane_is_rejected():
    with pytest.raises(ConfigError) as exc:
        parse(base=BASE.replace("planes = x, y", "planes = symz"))
    assert any("symz" in v for v in exc.value.violations)


def test_unknown_surface_tag():
    extra = "[mode.7]\nsurface = symz\nnormal = 1\nparity_x = even\nparity_y = even\n"
    with pytest.raises(ConfigError):
        parse(extra, BASE.replace("modes = 3", "modes = 3, 7"))


def test_errors_are_aggregated():
    bad = BASE.replace("depth = 3.0", "depth = -1").replace("order = 2", "order = two")
    bad += "[time]\ncfl = 2\n[bogus]\nx = 1\n[solver]\nmethod = gmres\n"
    with pytest.raises(ConfigError) as exc:
        parse(base=bad)
    assert len(exc.value.violations) >= 5


@pytest.mark.parametrize("extra,needle", [
    ("[mode.7]\nsurface = special1\nnormal = 1\n", "parity"),
    ("[mode.7]\nsurface = special1\nnormal = __import__('os')\nparity_x = even\nparity_y = even\n",
     "normal"),
    ("[damping.1]\nkind = ring\nstart = 1\nend = 2\n", "damping"),
])
def test_mode_and_zone_errors(extra, needle):
    with pytest.raises(ConfigError) as exc:
        parse(extra, BASE.replace("modes = 3", "modes = 3, 7"))
    assert any(needle in v for v in exc.value.violations)


def test_schema_version():
    with pytest.raises(ConfigError):
        parse(base=BASE.replace("schema = 1", "schema = 2"))


def test_normal_expression():
    e = NormalExpression("where(x > 0, sqrt(abs(y)), -nz) + pi * 0")
    pts = np.array([[1.0, 4.0, 0.0], [-1.0, 4.0, 0.0]])
    nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.5]])
    assert np.allclose(e(pts, nrm), [2.0, -0.5])
    for bad in ("x.__class__", "open('f')", "lambda: 1", "x if y else z"):
        with pytest.raises(ValueError):
            NormalExpression(bad)


def test_normal_expression_back_wall_shape():
    e = NormalExpression("cos((pi / 5) * (y - 2.2))")
    y = np.array([2.2, 4.7, -0.3])
    pts = np.column_stack([np.zeros(3), y, np.zeros(3)])
    assert np.allclose(e(pts, np.zeros((3, 3))), np.cos(np.pi / 5 * (y - 2.2)))


def test_check_against_mesh():
    cfg = parse()
    check_against_mesh(cfg, desk.box_body_tank(n_body=1, n_out=2, nz_body=1, nz_below=1))
    with pytest.raises(ConfigError):
        check_against_mesh(cfg, desk.box_tank())
