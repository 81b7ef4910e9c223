"""Run configuration: an INI-style file validated into a :class:`RunConfig`.

Sections (all keys are case-insensitive)::

    [run]          schema (currently 1), name, output_dir
    [mesh]         path (relative to the config file), order, stretch_<axis> = start, ratio
    [environment]  depth, g, rho
    [symmetry]     planes = x, y        (x: plane y=0 / tag symx; y: plane x=0 / tag symy)
    [radiation]    modes = 1, 3, 5      s, eps
    [diffraction]  modes = 1, 3         heading_deg (or heading), s, eps
    [mode.K]       surface, normal (expression in x, y, z, nx, ny, nz), parity_x, parity_y
    [damping.N]    kind (x|y|radial|rect), start, end, start_y, pressure_scale, velocity_scale
    [time]         cfl, duration (seconds or 'auto'), extend, cap
    [solver]       method (direct|cg), dz (flux|trace), rel_tolerance, preconditioner
    [output]       omega_points, length_scale, jsonl, time_series
"""
from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mesh import BoundaryTag, StretchSpec
from .waves import ZONE_KINDS, DampingZone

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "sqrt": np.sqrt,
    "abs": np.abs, "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh, "log": np.log,
    "arctan2": np.arctan2, "hypot": np.hypot, "where": np.where,
}
_ALLOWED_NAMES = {"x", "y", "z", "nx", "ny", "nz", "pi"}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
                  ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
                  ast.UAdd, ast.Compare, ast.Gt, ast.Lt, ast.GtE, ast.LtE, ast.Mod)

SCHEMA_VERSION = 1
KEYS = {
    "run": {"schema", "name", "output_dir"},
    "mesh": {"path", "order"},
    "environment": {"depth", "g", "rho"},
    "symmetry": {"planes"},
    "radiation": {"modes", "s", "eps"},
    "diffraction": {"modes", "s", "eps", "heading", "heading_deg"},
    "time": {"cfl", "duration", "extend", "cap"},
    "solver": {"method", "dz", "rel_tolerance", "preconditioner"},
    "output": {"omega_points", "length_scale", "jsonl", "time_series"},
    "mode": {"surface", "normal", "parity_x", "parity_y"},
    "damping": {"kind", "start", "end", "start_y", "pressure_scale", "velocity_scale"},
}
SECTIONS = ("run", "mesh", "environment", "symmetry", "radiation", "diffraction", "time",
            "solver", "output")


class NormalExpression:
    """Whitelisted arithmetic expression for a generalized normal ``n_k(x, y, z, n)``."""

    def __init__(self, text):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ValueError(f"disallowed syntax {type(node).__name__} in {text!r}")
            if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES | set(_ALLOWED_FUNCS):
                raise ValueError(f"unknown name {node.id!r} in {text!r}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                                   and node.func.id in _ALLOWED_FUNCS):
                raise ValueError(f"only simple function calls allowed in {text!r}")
        self._code = compile(tree, "<normal>", "eval")

    def __call__(self, points, normals):
        env = dict(_ALLOWED_FUNCS, pi=np.pi, x=points[:, 0], y=points[:, 1], z=points[:, 2],
                   nx=normals[:, 0], ny=normals[:, 1], nz=normals[:, 2])
        val = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(val, dtype=float), (len(points),))

    def __repr__(self):
        return f"NormalExpression({self.text!r})"


@dataclass(frozen=True)
class ModeSpec:
    index: int
    surface: str = "body"
    normal: NormalExpression | None = None
    parity: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ImpulseSpec:
    s: float
    eps: float = 1e-8


@dataclass
class RunConfig:
    name: str
    mesh_path: Path
    order: int
    depth: float
    g: float = 9.81
    rho: float = 1000.0
    planes: tuple = ()
    radiation_modes: tuple = ()
    radiation_impulse: ImpulseSpec | None = None
    diffraction_modes: tuple = ()
    diffraction_impulse: ImpulseSpec | None = None
    heading: float = 0.0
    modes: dict = field(default_factory=dict)          # k > 6 -> ModeSpec
    zones: tuple = ()
    stretch: tuple = ()
    cfl: float = 1.0
    duration: float | None = None                     # None: automatic
    extend: bool = True
    cap: float | None = None
    solver_method: str = "direct"
    dz_method: str = "flux"
    rel_tolerance: float = 1e-10
    preconditioner: str = "diagonal"
    omega_points: int = 400
    length_scale: float | None = None
    jsonl: bool = True
    time_series: bool = True
    output_dir: Path | None = None
    source: Path | None = None

    @property
    def all_modes(self):
        return tuple(sorted(set(self.radiation_modes) | set(self.diffraction_modes)
                            | set(self.modes)))


def _split_list(text):
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


class _Reader:
    """Collects every violation instead of stopping at the first."""

    def __init__(self, cp):
        self.cp = cp
        self.errors = []

    def get(self, sec, key, conv=str, default=None, required=False, check=None, msg=None):
        if not self.cp.has_section(sec) or not self.cp.has_option(sec, key):
            if required:
                self.errors.append(f"[{sec}] missing required key '{key}'")
            return default
        raw = self.cp.get(sec, key)
        try:
            val = conv(raw)
        except (TypeError, ValueError) as exc:
            self.errors.append(f"[{sec}] {key} = {raw!r}: {exc}")
            return default
        if check is not None and not check(val):
            self.errors.append(f"[{sec}] {key} = {raw!r}: {msg or 'invalid value'}")
            return default
        return val


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _ints(text):
    return tuple(int(t) for t in _split_list(text))


def _auto_float(text):
    return None if text.strip().lower() == "auto" else float(text)


def _plane(text):
    t = text.strip().lower()
    if t in ("x", "symx"):
        return "x"
    if t in ("y", "symy"):
        return "y"
    raise ValueError(f"unknown symmetry plane {text!r} (use x/symx or y/symy)")


def _tag_name(text):
    t = text.strip().lower()
    try:
        return BoundaryTag.from_name(t).name
    except Exception:
        raise ValueError(f"unknown boundary tag {text!r}") from None


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    base = Path(base) if base is not None else Path.cwd()
    r = _Reader(cp)
    for sec in cp.sections():
        head = sec.split(".")[0]
        if sec not in SECTIONS and head not in ("mode", "damping"):
            r.errors.append(f"unknown section [{sec}]")
            continue
        for key in cp.options(sec):
            if key not in KEYS[head] and not (sec == "mesh" and key.startswith("stretch_")):
                r.errors.append(f"[{sec}] unknown key '{key}'")

    r.get("run", "schema", int, SCHEMA_VERSION, check=lambda v: v == SCHEMA_VERSION,
          msg=f"this version reads schema {SCHEMA_VERSION}")
    name = r.get("run", "name", default="run")
    out = r.get("run", "output_dir", Path)
    mesh_rel = r.get("mesh", "path", required=True)
    order = r.get("mesh", "order", int, 2, check=lambda v: 1 <= v <= 10, msg="order must be 1..10")
    stretch = []
    if cp.has_section("mesh"):
        for key in cp.options("mesh"):
            if key.startswith("stretch_"):
                axis = key[len("stretch_"):]
                vals = r.get("mesh", key, lambda t: tuple(float(v) for v in _split_list(t)))
                if axis not in ("x", "y", "radial"):
                    r.errors.append(f"[mesh] {key}: unknown stretching axis {axis!r}")
                elif vals is None or len(vals) != 2:
                    r.errors.append(f"[mesh] {key}: expected 'start, ratio'")
                else:
                    try:
                        stretch.append(StretchSpec(axis, vals[0], vals[1]))
                    except Exception as exc:
                        r.errors.append(f"[mesh] {key}: {exc}")
    pos = lambda v: np.isfinite(v) and v > 0
    depth = r.get("environment", "depth", float, required=True, check=pos, msg="must be > 0")
    g = r.get("environment", "g", float, 9.81, check=pos, msg="must be > 0")
    rho = r.get("environment", "rho", float, 1000.0, check=pos, msg="must be > 0")
    planes = r.get("symmetry", "planes", lambda t: tuple(sorted({_plane(p) for p in _split_list(t)})),
                   ())

    def impulse(sec):
        if not cp.has_section(sec):
            return None
        s = r.get(sec, "s", float, required=True, check=pos, msg="must be > 0")
        eps = r.get(sec, "eps", float, 1e-8, check=lambda v: 0 < v < 1, msg="must lie in (0, 1)")
        return ImpulseSpec(s, eps) if s is not None else None

    rad_modes = r.get("radiation", "modes", _ints, ())
    rad_imp = impulse("radiation")
    dif_modes = r.get("diffraction", "modes", _ints, ())
    dif_imp = impulse("diffraction")
    heading = 0.0
    if cp.has_section("diffraction"):
        if cp.has_option("diffraction", "heading_deg"):
            heading = np.deg2rad(r.get("diffraction", "heading_deg", float, 0.0))
        else:
            heading = r.get("diffraction", "heading", float, 0.0)
    for k in tuple(rad_modes or ()) + tuple(dif_modes or ()):
        if k < 1:
            r.errors.append(f"mode index {k} must be >= 1")

    modes = {}
    zones = []
    for sec in cp.sections():
        if sec.startswith("mode."):
            try:
                k = int(sec.split(".", 1)[1])
            except ValueError:
                r.errors.append(f"[{sec}] mode sections are named mode.<index>")
                continue
            if k <= 6:
                r.errors.append(f"[{sec}] rigid modes 1..6 are built in; use k >= 7")
                continue
            surface = r.get(sec, "surface", _tag_name, required=True)
            normal = r.get(sec, "normal", NormalExpression, required=True)
            parity = {}
            for p in planes or ():
                key = f"parity_{p}"
                val = r.get(sec, key, lambda t: t.strip().lower(),
                            check=lambda v: v in ("even", "odd"), msg="expected even or odd")
                if val is None and not cp.has_option(sec, key):
                    r.errors.append(f"[{sec}] generalized mode needs '{key}' with symmetry "
                                    f"plane {p}")
                elif val is not None:
                    parity[p] = val
            modes[k] = ModeSpec(k, surface or "body", normal, parity)
        elif sec.startswith("damping."):
            kind = r.get(sec, "kind", str, "rect", check=lambda v: v in ZONE_KINDS,
                         msg=f"kind must be one of {ZONE_KINDS}")
            start = r.get(sec, "start", float, required=True)
            end = r.get(sec, "end", float, required=True)
            sy = r.get(sec, "start_y", float)
            ps = r.get(sec, "pressure_scale", float, 1.0)
            vs = r.get(sec, "velocity_scale", float, 1.0)
            if None not in (kind, start, end):
                try:
                    zones.append(DampingZone(kind, start, end, sy, pressure_scale=ps,
                                             velocity_scale=vs))
                except Exception as exc:
                    r.errors.append(f"[{sec}] {exc}")
    for k in tuple(rad_modes or ()) + tuple(dif_modes or ()):
        if k > 6 and k not in modes:
            r.errors.append(f"mode {k} requested but no [mode.{k}] section defines its normal")
    if not rad_modes and not dif_modes:
        r.errors.append("nothing to compute: give [radiation] or [diffraction] modes")

    cfl = r.get("time", "cfl", float, 1.0, check=lambda v: 0 < v <= 1, msg="must lie in (0, 1]")
    duration = r.get("time", "duration", _auto_float, None,
                     check=lambda v: v is None or v > 0, msg="must be > 0 or auto")
    extend = r.get("time", "extend", _bool, True)
    cap = r.get("time", "cap", _auto_float, None)
    method = r.get("solver", "method", str, "direct", check=lambda v: v in ("direct", "cg"),
                   msg="expected direct or cg")
    dz = r.get("solver", "dz", str, "flux", check=lambda v: v in ("flux", "trace"),
               msg="expected flux or trace")
    tol = r.get("solver", "rel_tolerance", float, 1e-10, check=lambda v: 0 < v <= 1e-2,
                msg="must lie in (0, 1e-2]")
    pre = r.get("solver", "preconditioner", str, "diagonal",
                check=lambda v: v in ("none", "diagonal", "incomplete-factorization"),
                msg="expected none, diagonal or incomplete-factorization")
    npts = r.get("output", "omega_points", int, 400, check=lambda v: v >= 2, msg="must be >= 2")
    L = r.get("output", "length_scale", float, None, check=pos, msg="must be > 0")
    jsonl = r.get("output", "jsonl", _bool, True)
    ts = r.get("output", "time_series", _bool, True)

    if r.errors:
        raise ConfigError(r.errors)
    return RunConfig(
        name=name, mesh_path=(base / mesh_rel).resolve(), order=order, depth=depth, g=g,
        rho=rho, planes=planes or (), radiation_modes=tuple(rad_modes or ()),
        radiation_impulse=rad_imp, diffraction_modes=tuple(dif_modes or ()),
        diffraction_impulse=dif_imp, heading=float(heading), modes=modes, zones=tuple(zones),
        stretch=tuple(stretch), cfl=cfl, duration=duration, extend=extend, cap=cap,
        solver_method=method, dz_method=dz, rel_tolerance=tol, preconditioner=pre,
        omega_points=npts, length_scale=L, jsonl=jsonl, time_series=ts,
        output_dir=(base / out).resolve() if out is not None else None, source=None)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    cfg = parse_config(text, path.parent)
    cfg.source = path.resolve()
    return cfg


def check_against_mesh(cfg: RunConfig, mesh) -> None:
    """Every referenced tag must exist in the mesh."""
    errors = []
    from .symmetry import PLANE_TAGS
    for p in cfg.planes:
        if not mesh.has_tag(PLANE_TAGS[p]):
            errors.append(f"symmetry plane {p} declared but mesh has no {PLANE_TAGS[p]} facets")
    needs_body = any(k <= 6 for k in cfg.radiation_modes + cfg.diffraction_modes)
    if needs_body and not mesh.has_tag("body"):
        errors.append("rigid-body modes requested but mesh has no body facets")
    for k, m in cfg.modes.items():
        if not mesh.has_tag(m.surface):
            errors.append(f"mode {k} surface {m.surface!r} not present in mesh")
    if not mesh.has_tag("freesurface"):
        errors.append("mesh has no freesurface facets")
    if errors:
        raise ConfigError(errors)

