"""Command-line entry point and run orchestration.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, desk, verify
from .config import RunConfig, check_against_mesh, load_config
from .errors import (ConfigError, DomainError, ParseError, SempiError, SimulationError,
                     TaggingError, TopologyError, TruncationWarning)
from .linalg import SolverConfig
from .mesh import HybridMesh, apply_stretching, min_spacing, read_msh, write_msh
from .post import (HydroResult, NondimSpec, excitation_forces, froude_krylov, nondimensionalize,
                   omega_grid, radiation_coefficients)
from .sim import (DiffractionProblem, Mode, RadiationProblem, build_setup, compute_timegrid,
                  default_duration, simulate, solve_infinite_frequency)
from .symmetry import SymmetryConfig, mode_flags, schedule
from .waves import Environment, PseudoImpulse, impulse_diagnostic

log = logging.getLogger("sempi")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
DECAY_TOL = 1e-4
_INPUT_ERRORS = (ConfigError, ParseError, TaggingError, TopologyError, FileNotFoundError)


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunPlan:
    """Problems to solve, resolved before any solve so routing failures surface early."""
    radiation: tuple = ()
    blocks: tuple = ()
    a_inf: tuple = ()
    notes: list = field(default_factory=list)


def build_modes(cfg: RunConfig) -> dict:
    modes = {}
    for k in cfg.all_modes:
        if k <= 6:
            modes[k] = Mode(k)
        else:
            m = cfg.modes[k]
            modes[k] = Mode(k, m.surface, m.normal, dict(m.parity) or None)
    return modes


def plan_run(cfg: RunConfig, modes: dict) -> RunPlan:
    parity = {k: m.parity for k, m in modes.items() if m.parity}
    for k in cfg.radiation_modes:
        mode_flags(k, cfg.planes, parity)          # raises for undeclared parity
    blocks = tuple(schedule(cfg.planes, cfg.diffraction_modes, parity)) if cfg.diffraction_modes \
        else ()
    return RunPlan(radiation=tuple(cfg.radiation_modes), blocks=blocks,
                   a_inf=tuple(cfg.radiation_modes))


def prepare_mesh(cfg: RunConfig) -> HybridMesh:
    mesh = read_msh(cfg.mesh_path)
    for spec in cfg.stretch:
        mesh = apply_stretching(mesh, spec)
    check_against_mesh(cfg, mesh)
    return mesh


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _grid_for(cfg, mesh, env, pi, dx):
    T = cfg.duration if cfg.duration is not None else default_duration(pi)
    return compute_timegrid(mesh, cfg.order, env, cfg.cfl, T, dx_min=dx)


def _run_one(problem, grid, cfg):
    try:
        return simulate(problem, grid, extend=cfg.extend, cap=cfg.cap)
    except SimulationError:
        raise
    except SempiError as exc:
        raise SimulationError(str(exc), {"problem": problem.label}) from exc


def run(cfg: RunConfig, output_dir: Path | None = None, threads: int = 1, seed=None) -> dict:
    """Solve every scheduled problem and write results to ``output_dir``.

    Returns the manifest dictionary.  Outputs depend only on the configuration
    and mesh, so repeated runs produce byte-identical files.
    """
    out = Path(output_dir or cfg.output_dir or Path.cwd() / cfg.name)
    mesh = prepare_mesh(cfg)
    modes = build_modes(cfg)
    plan = plan_run(cfg, modes)
    env = Environment(g=cfg.g, depth=cfg.depth, rho=cfg.rho)
    parity = {k: m.parity for k, m in modes.items() if m.parity}
    solver_cfg = SolverConfig(rel_tolerance=cfg.rel_tolerance, preconditioner=cfg.preconditioner)
    setup = build_setup(mesh, cfg.order, env, SymmetryConfig(cfg.planes, len(cfg.modes), parity),
                        modes, cfg.zones, cfg.dz_method, cfg.solver_method, solver_cfg)
    dx = min_spacing(mesh, cfg.order)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": cfg.name,
        "versions": {"sempi": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "config_sha256": _digest(cfg.source.read_bytes()) if cfg.source else None,
        "mesh": {"path": cfg.mesh_path.name, "sha256": _digest(cfg.mesh_path.read_bytes()),
                 **mesh.summary()},
        "order": cfg.order, "n_dof": int(setup.ops.dofmap.n_dof),
        "n_free_surface": int(len(setup.ops.fs.nodes)),
        "environment": {"g": env.g, "depth": env.depth, "rho": env.rho},
        "symmetry_planes": list(cfg.planes), "seed": seed,
        "solver": {"method": cfg.solver_method, "dz": cfg.dz_method,
                   "rel_tolerance": cfg.rel_tolerance, "preconditioner": cfg.preconditioner},
        "problems": [], "warnings": [], "files": [],
    }
    # systems are cached lazily; build them up front so worker threads only read
    for k in plan.radiation:
        setup.system(setup.dirichlet_planes(setup.mode_flags(k)))
    for b in plan.blocks:
        setup.system(b.dirichlet_planes())

    jobs = []
    if plan.radiation:
        pi_r = PseudoImpulse(cfg.radiation_impulse.s, cfg.radiation_impulse.eps)
        grid_r = _grid_for(cfg, mesh, env, pi_r, dx)
        rec_modes = tuple(cfg.radiation_modes)
        for k in plan.radiation:
            jobs.append(("radiation", k, RadiationProblem(setup, k, pi_r, rec_modes), grid_r))
    if plan.blocks:
        pi_d = PseudoImpulse(cfg.diffraction_impulse.s, cfg.diffraction_impulse.eps)
        grid_d = _grid_for(cfg, mesh, env, pi_d, dx)
        for b in plan.blocks:
            jobs.append(("diffraction", b.label,
                         DiffractionProblem(setup, b, pi_d, cfg.heading,
                                            tuple(cfg.diffraction_modes)), grid_d))

    # warnings are summarized in the manifest from the records themselves
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(lambda j: _run_one(j[2], j[3], cfg), jobs))
        else:
            records = [_run_one(j[2], j[3], cfg) for j in jobs]

    files = []

    def emit(name, text):
        (out / name).write_text(text)
        files.append(name)

    rad_records, dif_records = {}, {}
    for (kind, key, problem, grid), rec in zip(jobs, records):
        (rad_records if kind == "radiation" else dif_records)[key] = rec
        if rec.decay_ratio >= DECAY_TOL:
            manifest["warnings"].append(
                f"{problem.label}: terminal/peak force ratio {rec.decay_ratio:.2e} at "
                f"t = {rec.times[-1]:.3f} s")
        manifest["problems"].append({
            "kind": kind, "label": problem.label, "dt": rec.dt, "n_steps": rec.n_steps,
            "t_start": float(rec.times[0]), "t_end": float(rec.times[-1]),
            "initial_n_steps": grid.n_steps, "cfl": grid.cfl,
            "dx_min": grid.dx_min, "s": problem.impulse.s, "eps": problem.impulse.eps,
            "t0": problem.impulse.t0, "decay_ratio": rec.decay_ratio,
            "dirichlet_planes": list(problem.planes)})
        if cfg.time_series:
            tag = f"k{key}" if kind == "radiation" else str(key)
            emit(f"timeseries_{kind}_{tag}.csv", rec.to_csv())

    results_out = []
    if rad_records:
        w = omega_grid(pi_r, "velocity", cfg.omega_points)
        ab = radiation_coefficients(rad_records, w)
        res = HydroResult(w, {jk: v[0] for jk, v in ab.items()}, {jk: v[1] for jk, v in ab.items()})
        for k in plan.a_inf:
            try:
                for j, v in solve_infinite_frequency(setup, k, cfg.radiation_modes).items():
                    if setup.force_factor(j, setup.mode_flags(k)) != 0.0:
                        res.a_inf[(j, k)] = v
            except SempiError as exc:
                raise SimulationError(str(exc), {"problem": f"infinite frequency k={k}"}) from exc
        manifest["radiation_omega_limit"] = list(w[[0, -1]])
        results_out.append(("radiation", res))
        emit("a_inf.csv", res.a_inf_csv())
    if dif_records:
        w = omega_grid(pi_d, "elevation", cfg.omega_points)
        Xs = excitation_forces(dif_records, w, cfg.planes, cfg.diffraction_modes, parity)
        X0 = froude_krylov(setup, w, cfg.heading, cfg.planes, cfg.diffraction_modes)
        res = HydroResult(w, Xs=Xs, X0=X0, meta={"heading": cfg.heading})
        manifest["diffraction_omega_limit"] = list(w[[0, -1]])
        manifest["heading_rad"] = cfg.heading
        results_out.append(("excitation", res))

    plot_lines = []
    for name, res in results_out:
        emit(f"{name}.csv", res.to_csv(g=env.g, L=cfg.length_scale))
        if cfg.length_scale is not None:
            nd = nondimensionalize(res, NondimSpec(cfg.length_scale, env.g, env.rho))
            emit(f"{name}_nondim.csv", nd.to_csv(g=env.g, L=None))
            if name == "radiation":
                emit("a_inf_nondim.csv", nd.a_inf_csv())
        if cfg.jsonl:
            for line in res.to_jsonl(g=env.g).splitlines():
                rec = json.loads(line)
                rec["file"] = name
                plot_lines.append(json.dumps(rec))
    if cfg.jsonl and plot_lines:
        emit("plot_data.jsonl", "\n".join(plot_lines) + "\n")
    manifest["files"] = sorted(files)
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True)
                                       + "\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# convergence and diagnostics subcommands
# ---------------------------------------------------------------------------

def _ints(text):
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _mms_mesh(args):
    if args.mesh:
        return read_msh(args.mesh)
    return desk.box_tank(args.lx, args.ly, args.depth, args.n, args.n, args.n)


def _mms_case(args, mesh):
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    if args.wavenumbers:
        k = [float(v) for v in args.wavenumbers.split(",")]
        return verify.MMSCase.trig(k, args.phase)
    return verify.MMSCase.box_default(hi - lo, args.phase)


def cmd_mms(args):
    mesh = _mms_mesh(args)
    case = _mms_case(args, mesh)
    rows = []
    for P in _ints(args.orders):
        res = verify.run_mms_detail(mesh, P, case, args.method)
        rows.append(f"{P},{res.n_dof},{res.error:.17g}")
    print("P,n_dof,l1_error")
    print("\n".join(rows))
    return EXIT_OK


def cmd_p_sweep(args):
    mesh = _mms_mesh(args)
    rep = verify.p_sweep(mesh, _ints(args.orders), _mms_case(args, mesh), args.method)
    text = rep.to_csv()
    _write_or_print(args, "p_sweep.csv", text)
    print(f"# decay {rep.decay_orders():.2f} orders, monotone={rep.monotone()}", file=sys.stderr)
    return EXIT_OK


def cmd_h_sweep(args):
    levels = _ints(args.levels)
    meshes = [desk.box_tank(args.lx, args.ly, args.depth, n, n, n, name=f"box-n{n}")
              for n in levels]
    rep = verify.h_sweep(meshes, _ints(args.orders), _mms_case(args, meshes[0]), args.method)
    _write_or_print(args, "h_sweep.csv", rep.to_csv())
    for P, r in sorted(rep.rates.items()):
        print(f"# P={P}: fitted rate {r:.3f} (expected {P + 1})", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args):
    mesh = read_msh(args.mesh)
    info = mesh.summary()
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    info["bounds"] = {"min": lo.tolist(), "max": hi.tolist()}
    try:
        info["min_free_surface_spacing"] = {P: min_spacing(mesh, P) for P in _ints(args.orders)}
    except DomainError:
        info["min_free_surface_spacing"] = None
    print(json.dumps(_jsonable(info), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_impulse(args):
    env = Environment(g=args.g, depth=args.depth)
    pi = PseudoImpulse(args.s, args.eps)
    dx = min_spacing(read_msh(args.mesh), args.order) if args.mesh else None
    out = {}
    for kind in ("velocity", "elevation"):
        d = impulse_diagnostic(pi, env, dx, kind)
        out[kind] = {"omega_limit": list(d.omega_limit),
                     "shortest_wavelength": d.shortest_wavelength,
                     "nodes_per_wavelength": d.nodes_per_wavelength}
    out.update(s=pi.s, eps=pi.eps, t0=pi.t0, default_duration=default_duration(pi))
    if dx is not None:
        out["dx_min"] = dx
        out["dt_at_cfl_1"] = dx / env.u_max
    print(json.dumps(_jsonable(out), indent=2, sort_keys=True))
    return EXIT_OK


DESK_MESHES = {
    "sphere": lambda: desk.sphere_tank(radius=1.0, depth=3.0, extent=4.0),
    "sphere-r5": lambda: desk.sphere_tank(radius=5.0, depth=25.0, extent=20.0, cube=10.0,
                                          top_layer=0.5, name="sphere-r5"),
    "submerged-sphere": lambda: desk.sphere_tank(radius=1.0, depth=6.0, extent=6.0,
                                                 submerged_depth=2.5, geometry_order=2),
    "box": lambda: desk.box_body_tank(),
    "moonpool": lambda: desk.box_body_tank(chamber=(0.5, 0.5), name="moonpool"),
    "tank": lambda: desk.box_tank(2.0, 2.0, 1.0, 2, 2, 3),
}


def cmd_desk(args):
    mesh = DESK_MESHES[args.kind]()
    if args.full:
        mesh = desk.full_from_quarter(mesh)
    Path(args.output).write_text(write_msh(mesh))
    print(json.dumps(mesh.summary(), sort_keys=True))
    return EXIT_OK


def cmd_run(args):
    if not args.config:
        raise ConfigError("run needs --config")
    cfg = load_config(args.config)
    with warnings.catch_warnings():
        # truncation is reported once per problem from the manifest below
        warnings.simplefilter("ignore", TruncationWarning)
        manifest = run(cfg, args.output_dir, args.threads, args.seed)
    for w in manifest["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(manifest['files']) + 1} files to "
          f"{args.output_dir or cfg.output_dir or cfg.name}")
    return EXIT_OK


def _write_or_print(args, name, text):
    if args.output_dir:
        p = Path(args.output_dir)
        p.mkdir(parents=True, exist_ok=True)
        (p / name).write_text(text)
    else:
        sys.stdout.write(text)


def _add_mms_args(p, orders):
    p.add_argument("--mesh", help="MSH file (default: desk box tank)")
    p.add_argument("--orders", default=orders, help="polynomial orders, e.g. 1-6 or 1,2,3")
    p.add_argument("--lx", type=float, default=2.0)
    p.add_argument("--ly", type=float, default=2.0)
    p.add_argument("--depth", type=float, default=1.0)
    p.add_argument("--n", type=int, default=2, help="desk cells per direction")
    p.add_argument("--wavenumbers", help="kx,ky,kz of the manufactured field")
    p.add_argument("--phase", type=lambda t: [float(v) for v in t.split(",")],
                   default=[0.3, 0.2, 0.1])
    p.add_argument("--method", choices=("direct", "cg"), default="direct")


def build_parser():
    ap = argparse.ArgumentParser(prog="sempi", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--output-dir", type=Path, help="directory for results")
    common.add_argument("--threads", type=int, default=1,
                        help="independent problems solved concurrently")
    common.add_argument("--seed", type=int, help="recorded in the manifest; runs are deterministic")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="radiation/diffraction run from a config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("mms", parents=[common], help="manufactured-solution error")
    _add_mms_args(p, "2")
    p.set_defaults(func=cmd_mms)
    p = sub.add_parser("p-sweep", parents=[common], help="error versus polynomial order")
    _add_mms_args(p, "1-6")
    p.set_defaults(func=cmd_p_sweep)
    p = sub.add_parser("h-sweep", parents=[common], help="error versus mesh size")
    _add_mms_args(p, "1,2,3")
    p.add_argument("--levels", default="2,4,8", help="desk cells per direction per level")
    p.set_defaults(func=cmd_h_sweep)
    p = sub.add_parser("inspect-mesh", parents=[common], help="mesh summary")
    p.add_argument("mesh")
    p.add_argument("--orders", default="1,2,3")
    p.set_defaults(func=cmd_inspect)
    p = sub.add_parser("impulse-diagnose", parents=[common],
                       help="frequency band and resolution of a pseudo-impulse")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--depth", type=float, required=True)
    p.add_argument("--g", type=float, default=9.81)
    p.add_argument("--mesh")
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_impulse)
    p = sub.add_parser("desk-mesh", parents=[common], help="write a generated test mesh")
    p.add_argument("kind", choices=sorted(DESK_MESHES))
    p.add_argument("output")
    p.add_argument("--full", action="store_true", help="mirror the quarter mesh to the full tank")
    p.set_defaults(func=cmd_desk)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SempiError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
