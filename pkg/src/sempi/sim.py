"""Time-domain driver: ERK4 on the free-surface conditions with a Laplace solve per stage.

State variables live on the free-surface nodes: the potential ``phi`` (the
Dirichlet data of every Laplace solve) and the elevation ``eta``.  Each
stage solves for the volumetric potential, extracts the vertical velocity
at the surface and evaluates

    d(phi)/dt = -g eta - p_D
    d(eta)/dt = dphi/dz - c_v eta

where ``p_D`` solves a 2D Poisson problem driven by ``c_p grad phi`` inside
the damping zones.  The vertical velocity is recovered by default from the
consistent boundary flux ``M_fs w = (A phi - b)_fs`` (the Laplace residual on
free-surface rows), which keeps the semi-discrete operator skew and the
scheme neutrally stable under the CFL limit; the element-local derivative
trace is available as ``dz_method='trace'``.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .errors import (NonConvergenceError, ParameterError, SimulationError, TruncationWarning)
from .linalg import DirichletSolver, SolverConfig
from .mesh import HybridMesh, min_spacing
from .symmetry import (PLANE_TAGS, SymmetryBlock, SymmetryConfig, decomposed_phase_gradient,
                       fft_synthesis, mode_flags)
from .waves import (Environment, PseudoImpulse, combined_profiles, depth_factors,
                    gaussian_impulse, gaussian_spectrum, gaussian_velocity, normalize_heading,
                    solve_dispersion)

log = logging.getLogger(__name__)

DZ_METHODS = ("flux", "trace")


# ---------------------------------------------------------------------------
# time grid and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    cfl: float
    dx_min: float
    u_max: float

    @property
    def T(self):
        return self.dt * self.n_steps

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def extended(self, n_steps):
        return TimeGrid(self.dt, int(n_steps), self.cfl, self.dx_min, self.u_max)


def default_duration(pi: PseudoImpulse):
    """Initial simulated time ``2 t0 + 6/s``."""
    return 2.0 * pi.t0 + 6.0 / pi.s


def compute_timegrid(mesh: HybridMesh | None, P: int, env: Environment, C: float = 1.0,
                     T: float = 1.0, dx_min: float | None = None) -> TimeGrid:
    """``dt = C dx_min / sqrt(g h)`` and enough steps to cover ``T``."""
    if not 0 < C <= 1:
        raise ParameterError(f"CFL constant must lie in (0, 1], got {C}")
    if not T > 0:
        raise ParameterError(f"simulated time must be positive, got {T}")
    if dx_min is None:
        dx_min = min_spacing(mesh, P)
    u = env.u_max
    dt = C * dx_min / u
    n = int(math.ceil(T / dt - 1e-9))
    return TimeGrid(float(dt), max(n, 1), float(C), float(dx_min), u)


@dataclass
class SurfaceState:
    phi: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def copy(self):
        return SurfaceState(self.phi.copy(), self.eta.copy())

    def axpy(self, a, d):
        return SurfaceState(self.phi + a * d.phi, self.eta + a * d.eta)

    def finite(self):
        return bool(np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.eta)))


def rk4_core(f: Callable, y, t, dt):
    """One classical RK4 step for ``y' = f(t, y)`` on array states."""
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    """Generalized normal ``n_k`` on one wetted surface.

    Rigid modes 1..6 use ``n`` and ``r x n`` on the body; generalized modes
    carry a callable ``expr(points, normals) -> values`` (or a constant) and
    an explicit per-plane parity.
    """
    index: int
    surface: str = "body"
    expr: Callable | float | None = None
    parity: dict | None = None

    def normal(self, points, normals, ref_point=(0.0, 0.0, 0.0)):
        k = self.index
        if k <= 3:
            return normals[:, k - 1].copy()
        if k <= 6:
            r = points - np.asarray(ref_point, dtype=float)
            return np.cross(r, normals)[:, k - 4]
        if self.expr is None:
            raise ParameterError(f"generalized mode {k} needs a normal expression")
        if callable(self.expr):
            return np.broadcast_to(np.asarray(self.expr(points, normals), dtype=float),
                                   (len(points),)).copy()
        return np.full(len(points), float(self.expr))


def rigid_modes(indices=(1, 2, 3, 4, 5, 6)):
    return {k: Mode(k) for k in indices}


# ---------------------------------------------------------------------------
# setup: operators shared by every problem
# ---------------------------------------------------------------------------

class FreeSurfaceSystem:
    """Operators of the semi-discrete free-surface system for one Dirichlet-plane set."""

    def __init__(self, setup: "SimSetup", planes=()):
        ops = setup.ops
        dm = ops.dofmap
        fs = ops.fs
        self.setup = setup
        self.planes = tuple(sorted(planes))
        self.n_fs = len(fs.nodes)
        plane_nodes = [dm.nodes_on(PLANE_TAGS[p]) for p in self.planes
                       if PLANE_TAGS[p] in dm.boundary_nodes]
        pn = np.unique(np.concatenate(plane_nodes)) if plane_nodes else np.zeros(0, np.int64)
        self.frozen = np.isin(fs.nodes, pn)
        self.active = ~self.frozen
        fixed = np.union1d(fs.nodes, pn)
        self.solver = DirichletSolver(ops.stiffness, fixed, method=setup.solver_method,
                                      cfg=setup.solver_cfg)
        self._fs_pos = np.searchsorted(self.solver.fixed, fs.nodes)
        self.A_fs = ops.stiffness[fs.nodes].tocsr()
        act = np.nonzero(self.active)[0]
        self._act = act
        self.M = fs.mass
        self._mass = spla.splu(sp.csc_matrix(fs.mass[act][:, act]))
        self.dz_method = setup.dz_method
        self.g = setup.env.g
        # damping zones
        self.c_p = setup.c_p
        self.c_v = np.where(self.frozen, 0.0, setup.c_v)
        zone = np.nonzero((self.c_p > 0) & self.active)[0]
        self._zone = zone
        if len(zone):
            K = fs.stiffness
            self._pd = spla.splu(sp.csc_matrix(K[zone][:, zone]))
            self._Kcp = setup.Kcp
        else:
            self._pd = None

    def laplace(self, phi_fs, b):
        g = np.zeros(len(self.solver.fixed))
        g[self._fs_pos] = np.where(self.frozen, 0.0, phi_fs)
        return self.solver.solve(b, g)

    def vertical_velocity(self, phi, b):
        w = np.zeros(self.n_fs)
        if self.dz_method == "flux":
            r = self.A_fs @ phi - b[self.setup.ops.fs.nodes]
            w[self._act] = self._mass.solve(r[self._act])
        else:
            w[:] = self.setup.ops.dz_trace @ phi
            w[self.frozen] = 0.0
        return w

    def pressure_damping(self, phi_fs):
        """``p_D`` with ``p_D = 0`` wherever ``c_p`` vanishes."""
        p = np.zeros(self.n_fs)
        if self._pd is None:
            return p
        rhs = (self._Kcp @ phi_fs)[self._zone]
        p[self._zone] = self._pd.solve(rhs)
        return p

    def rhs(self, state: SurfaceState, b):
        phi = self.laplace(state.phi, b)
        w = self.vertical_velocity(phi, b)
        pd = self.pressure_damping(state.phi)
        dphi = -self.g * state.eta - pd
        deta = w - self.c_v * state.eta
        dphi[self.frozen] = 0.0
        deta[self.frozen] = 0.0
        return SurfaceState(dphi, deta), phi, w

    def energy(self, state: SurfaceState, w):
        """``1/2 int g eta^2 + 1/2 int phi dphi/dz`` over the free surface."""
        return 0.5 * self.g * state.eta @ (self.M @ state.eta) + 0.5 * state.phi @ (self.M @ w)


@dataclass(eq=False)
class SimSetup:
    mesh: HybridMesh
    P: int
    env: Environment
    ops: assembly.GlobalOperators
    symmetry: SymmetryConfig
    modes: dict
    zones: tuple = ()
    dz_method: str = "flux"
    solver_method: str = "direct"
    solver_cfg: SolverConfig | None = None
    ref_point: tuple = (0.0, 0.0, 0.0)
    c_p: np.ndarray = field(default=None, repr=False)
    c_v: np.ndarray = field(default=None, repr=False)
    Kcp: sp.csr_matrix = field(default=None, repr=False)
    _systems: dict = field(default_factory=dict, repr=False)

    @property
    def rho(self):
        return self.env.rho

    @property
    def multiplicity(self):
        return self.symmetry.multiplicity

    @property
    def wetted(self):
        """Surfaces carrying Neumann data for diffraction (body and special surfaces)."""
        return tuple(n for n in self.ops.boundaries if n == "body" or n.startswith("special"))

    def system(self, planes=()) -> FreeSurfaceSystem:
        key = tuple(sorted(planes))
        if key not in self._systems:
            self._systems[key] = FreeSurfaceSystem(self, key)
        return self._systems[key]

    def mode(self, k) -> Mode:
        if k not in self.modes:
            raise ParameterError(f"mode {k} not defined")
        return self.modes[k]

    def mode_flags(self, k):
        return mode_flags(k, self.symmetry.planes, self._parity())

    def _parity(self):
        return {k: m.parity for k, m in self.modes.items() if m.parity}

    def dirichlet_planes(self, flags):
        return tuple(p for p, th in flags.items() if th == 0)

    def mode_normal(self, k):
        m = self.mode(k)
        op = self.ops.boundary(m.surface)
        return op, m.normal(op.points, op.normals, self.ref_point)

    def mode_load(self, k):
        op, nk = self.mode_normal(k)
        return op.load(nk)

    def generalized_loads(self, phi, js):
        """``int phi n_j`` over each mode's surface (computational domain only)."""
        out = {}
        for j in js:
            op, nj = self.mode_normal(j)
            out[j] = float(op.integrate(op.field_at_points(phi) * nj))
        return out

    def force_factor(self, j, flags):
        """Mirror-image factor for a force on mode j from a field with parity ``flags``."""
        if not self.symmetry.planes:
            return 1.0
        return float(self.multiplicity) if self.mode_flags(j) == flags else 0.0


def build_setup(mesh: HybridMesh, P: int, env: Environment, symmetry: SymmetryConfig | None = None,
                modes: dict | None = None, zones=(), dz_method="flux", solver_method="direct",
                solver_cfg=None, ref_point=(0.0, 0.0, 0.0)) -> SimSetup:
    symmetry = symmetry or SymmetryConfig()
    symmetry.check_mesh(mesh)
    if dz_method not in DZ_METHODS:
        raise ParameterError(f"unknown dz method {dz_method!r}")
    modes = dict(modes) if modes is not None else rigid_modes()
    tags = {"body"} | {m.surface for m in modes.values()}
    tags |= {t.name for t in mesh.present_tags() if t.name.startswith("special")}
    for m in modes.values():
        if not mesh.has_tag(m.surface):
            raise ParameterError(f"mode {m.index} refers to missing surface {m.surface!r}")
    ops = assembly.assemble_operators(mesh, P, boundary_tags=tuple(sorted(tags)))
    if ops.fs is None:
        raise ParameterError("time-domain runs need a free surface")
    xy = ops.fs.coords
    zones = tuple(zones)
    if zones:
        c_p, c_v = combined_profiles(zones, xy)
        Kcp = assembly.fs_weighted_stiffness(mesh, ops.dofmap,
                                             lambda q: combined_profiles(zones, q)[0])
    else:
        c_p = c_v = np.zeros(len(xy))
        Kcp = None
    return SimSetup(mesh, P, env, ops, symmetry, modes, zones, dz_method, solver_method,
                    solver_cfg, tuple(ref_point), c_p, c_v, Kcp)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RadiationProblem:
    """Pseudo-impulsive motion ``x_k(t) = g(t)`` of mode k."""
    setup: SimSetup
    k: int
    impulse: PseudoImpulse
    record_modes: tuple | None = None

    def __post_init__(self):
        self.flags = self.setup.mode_flags(self.k)
        self.planes = self.setup.dirichlet_planes(self.flags)
        self._bk = self.setup.mode_load(self.k)
        if self.record_modes is None:
            self.record_modes = tuple(sorted(self.setup.modes))
        self.label = f"radiation k={self.k}"

    def load(self, t):
        return float(gaussian_velocity(self.impulse, t)) * self._bk

    def input_series(self, times):
        return gaussian_impulse(self.impulse, times)


@dataclass(eq=False)
class DiffractionProblem:
    """Scattered field of a pseudo-impulsive incident wave for one symmetry block."""
    setup: SimSetup
    block: SymmetryBlock
    impulse: PseudoImpulse
    beta: float = 0.0
    record_modes: tuple | None = None

    def __post_init__(self):
        self.beta = normalize_heading(self.beta)
        self.flags = self.block.flags()
        self.planes = self.block.dirichlet_planes()
        if self.record_modes is None:
            self.record_modes = tuple(sorted(self.setup.modes))
        self.label = f"diffraction block={self.block.label}"
        self._series = None
        self._tau = None
        self.t_start = 0.0
        self.lead_steps = 0

    def prepare(self, dt, n_steps):
        """Synthesize the body forcing on the half-step grid up to ``n_steps * dt``.

        Sets ``t_start <= 0``, the time at which the forcing is still negligible.
        """
        tau = dt / 2
        need = 2 * n_steps + 1
        self._tau = tau
        self._ops = [self.setup.ops.boundary(t) for t in self.setup.wetted]
        pts = np.concatenate([op.points for op in self._ops])
        nrm = np.concatenate([op.normals for op in self._ops])
        self._split = np.cumsum([op.n_points for op in self._ops])[:-1]
        self._series, n_lead = body_forcing(self.setup.env, self.impulse, self.block, self.beta,
                                            pts, nrm, tau, need)
        self.lead_steps = n_lead // 2
        self.t_start = -n_lead * tau

    def forcing_at(self, t):
        idx = (t - self.t_start) / self._tau
        i = int(round(idx))
        if abs(idx - i) > 1e-6 or i >= self._series.shape[1]:
            raise SimulationError("diffraction forcing requested off the synthesis grid",
                                  {"t": t, "block": self.block.label})
        return self._series[:, i]

    def load(self, t):
        q = self.forcing_at(t)
        b = np.zeros(self.setup.ops.dofmap.n_dof)
        for op, part in zip(self._ops, np.split(q, self._split)):
            b += op.load(part)
        return b

    def input_series(self, times):
        return gaussian_impulse(self.impulse, times)


def body_forcing(env: Environment, pi: PseudoImpulse, block, beta, points, normals, tau, n_samples,
                 cutoff=1e-16, lead_tol=1e-6):
    """``-n . F^{-1}[grad Psi^block  ghat]`` sampled every ``tau``.

    Upstream body points feel the slow short waves of the pulse before the
    elevation at the origin rises, so the series may start before ``t = 0``.
    Returns ``(series, n_lead)``: ``series[:, m]`` is the forcing at
    ``t = (m - n_lead) tau`` with ``n_lead`` even and chosen so the forcing
    at the first sample is below ``lead_tol`` of its peak.
    """
    w_cut = np.sqrt(8 * np.pi ** 2 * pi.s ** 2 * np.log(1.0 / cutoff))
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    zc = np.minimum(z, 0.0)
    n_fft = 1 << int(math.ceil(math.log2(max(4 * n_samples, 16))))
    while True:
        dw = 2 * np.pi / (n_fft * tau)
        M = min(int(math.ceil(w_cut / dw)) + 1, n_fft // 2)
        w = np.arange(M) * dw
        w[0] = 1e-6 * dw                    # zero-frequency limit of the regular spectrum
        k = solve_dispersion(w, env)
        C, S = depth_factors(k[:, None], zc[None, :], env.depth)
        E = np.empty((M, len(x)), dtype=complex)
        Ex = np.empty_like(E)
        Ey = np.empty_like(E)
        for m in range(M):
            E[m], Ex[m], Ey[m] = decomposed_phase_gradient(block, k[m], beta, x, y)
        amp = (1j * env.g / w)[:, None]
        dn = amp * (C * (Ex * normals[:, 0] + Ey * normals[:, 1])
                    + k[:, None] * S * E * normals[:, 2])
        spec = dn * gaussian_spectrum(pi, np.arange(M) * dw)[:, None]
        spec[0] = spec[0].real
        full = -fft_synthesis(spec.T, dw, n_fft)
        env_t = np.abs(full).max(axis=0)
        peak = env_t.max()
        # negative times live at the end of the periodic window
        above = np.nonzero(env_t[n_fft // 2:] > lead_tol * peak)[0] if peak > 0 else []
        # first kept sample is the last one still below the tolerance
        n_lead = 0 if len(above) == 0 else n_fft // 2 - int(above[0]) + 1
        n_lead += n_lead % 2
        if n_lead + n_samples <= n_fft // 2 or n_fft >= 1 << 24:
            break
        n_fft *= 2
    if n_lead >= n_fft // 2:
        warnings.warn(TruncationWarning("incident forcing does not decay before t = 0; "
                                        "decrease eps to start later", 1.0), stacklevel=2)
    series = np.concatenate([full[:, n_fft - n_lead:], full[:, :n_samples]], axis=1)
    return series, n_lead


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _stage(system, state, problem, t, ctx):
    try:
        return system.rhs(state, problem.load(t))
    except NonConvergenceError as exc:
        raise SimulationError(f"linear solve failed: {exc}", ctx) from exc


def rk4_step(state: SurfaceState, t: float, problem, dt: float, system=None):
    """One ERK4 step of the free-surface system; returns the new state."""
    system = system or problem.setup.system(problem.planes)
    ctx = {"problem": getattr(problem, "label", "?"), "t": t}
    d1 = _stage(system, state, problem, t, {**ctx, "stage": 1})[0]
    d2 = _stage(system, state.axpy(dt / 2, d1), problem, t + dt / 2, {**ctx, "stage": 2})[0]
    d3 = _stage(system, state.axpy(dt / 2, d2), problem, t + dt / 2, {**ctx, "stage": 3})[0]
    d4 = _stage(system, state.axpy(dt, d3), problem, t + dt, {**ctx, "stage": 4})[0]
    return SurfaceState(state.phi + dt / 6 * (d1.phi + 2 * d2.phi + 2 * d3.phi + d4.phi),
                        state.eta + dt / 6 * (d1.eta + 2 * d2.eta + 2 * d3.eta + d4.eta))


@dataclass
class BodyRecord:
    """Time series sampled every ``dt``: ``loads[j](t) = int_surface_j phi n_j`` (reduced domain)."""
    kind: str
    label: str
    dt: float
    times: np.ndarray
    loads: dict
    factors: dict                     # j -> mirror-image factor (0 when parity forbids)
    rho: float
    input_series: np.ndarray          # x_k(t) or zeta_0(t) at the record times
    phi_body: np.ndarray | None = None
    energy: np.ndarray | None = None
    eta_max: np.ndarray | None = None
    decay_ratio: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.times) - 1

    def force(self, j):
        """Full-body hydrodynamic force ``-rho d/dt int phi n_j`` (fourth-order differences)."""
        from .post import fd4_derivative
        return -self.rho * self.factors[j] * fd4_derivative(self.loads[j], self.dt)

    def to_csv(self, path=None):
        js = sorted(self.loads)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"F_{j}" for j in js])
        F = [self.force(j) for j in js]
        for i, t in enumerate(self.times):
            w.writerow([format(t, ".17g")] + [format(f[i], ".17g") for f in F])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _decay_ratio(rec_loads, factors, dt):
    from .post import fd4_derivative
    ratios = []
    for j, L in rec_loads.items():
        if factors.get(j, 1.0) == 0.0 or len(L) < 5:
            continue
        F = np.abs(fd4_derivative(np.asarray(L), dt))
        peak = F.max()
        if peak > 0:
            tail = max(5, len(F) // 50)
            ratios.append(F[-tail:].max() / peak)
    return max(ratios) if ratios else 0.0


def simulate(problem, grid: TimeGrid, state0: SurfaceState | None = None, extend=True,
             cap: float | None = None, decay_tol=1e-4, record_phi=False, record_energy=False):
    """Run ``problem`` over ``grid``; extends the run until the force decays (up to ``cap``)."""
    setup = problem.setup
    system = setup.system(problem.planes)
    dt = grid.dt
    pi = problem.impulse
    cap = 8.0 * pi.t0 if cap is None else cap
    n_cap = max(grid.n_steps, int(math.ceil(cap / dt - 1e-9))) if extend else grid.n_steps
    if isinstance(problem, DiffractionProblem):
        problem.prepare(dt, n_cap)
    t_start = getattr(problem, "t_start", 0.0)
    lead = getattr(problem, "lead_steps", 0)
    state = state0.copy() if state0 is not None else SurfaceState.zeros(system.n_fs)
    js = tuple(problem.record_modes)
    loads = {j: [] for j in js}
    energy, eta_max, phis = [], [], []
    body = setup.ops.boundaries.get("body")

    def record(phi, w, st):
        for j, v in setup.generalized_loads(phi, js).items():
            loads[j].append(v)
        if record_energy:
            energy.append(system.energy(st, w))
        eta_max.append(float(np.abs(st.eta).max()))
        if record_phi and body is not None:
            phis.append(body.field_at_points(phi))

    factors = {j: setup.force_factor(j, problem.flags) for j in js}
    n_target = grid.n_steps + lead
    n_cap += lead
    n = 0
    ratio = 0.0
    while True:
        while n < n_target:
            t = t_start + n * dt
            ctx = {"problem": problem.label, "step": n, "t": t}
            d1, phi, w = _stage(system, state, problem, t, {**ctx, "stage": 1})
            record(phi, w, state)
            d2 = _stage(system, state.axpy(dt / 2, d1), problem, t + dt / 2, {**ctx, "stage": 2})[0]
            d3 = _stage(system, state.axpy(dt / 2, d2), problem, t + dt / 2, {**ctx, "stage": 3})[0]
            d4 = _stage(system, state.axpy(dt, d3), problem, t + dt, {**ctx, "stage": 4})[0]
            state = SurfaceState(state.phi + dt / 6 * (d1.phi + 2 * d2.phi + 2 * d3.phi + d4.phi),
                                 state.eta + dt / 6 * (d1.eta + 2 * d2.eta + 2 * d3.eta + d4.eta))
            if not state.finite():
                raise SimulationError("non-finite free-surface state", ctx)
            n += 1
        ratio = _decay_ratio(loads, factors, dt)
        if not extend or ratio < decay_tol or n >= n_cap:
            break
        n_target = min(n_cap, n + max(1, n // 4))
    # final sample at t = n dt
    _, phi, w = _stage(system, state, problem, t_start + n * dt,
                       {"problem": problem.label, "step": n})
    record(phi, w, state)
    ratio = _decay_ratio(loads, factors, dt)
    if ratio >= decay_tol:
        warnings.warn(TruncationWarning(
            f"{problem.label}: terminal/peak force ratio {ratio:.2e} at t = {t_start + n * dt:.3f} s",
            ratio), stacklevel=2)
    times = t_start + dt * np.arange(n + 1)
    rec = BodyRecord(
        kind="radiation" if isinstance(problem, RadiationProblem) else "diffraction",
        label=problem.label, dt=dt, times=times,
        loads={j: np.asarray(v) for j, v in loads.items()}, factors=factors, rho=setup.rho,
        input_series=problem.input_series(times),
        phi_body=np.array(phis).T if record_phi and phis else None,
        energy=np.asarray(energy) if record_energy else None, eta_max=np.asarray(eta_max),
        decay_ratio=ratio,
        meta=dict(dt=dt, n_steps=n, cfl=grid.cfl, dx_min=grid.dx_min, s=pi.s, t0=pi.t0,
                  eps=pi.eps, t_start=t_start, state=state))
    log.info("%s: %d steps, dt=%.4g, decay ratio %.2e", problem.label, n, dt, ratio)
    return rec


def run_radiation(problem: RadiationProblem, grid: TimeGrid, **kw) -> BodyRecord:
    return simulate(problem, grid, **kw)


def run_diffraction(problem: DiffractionProblem, grid: TimeGrid, **kw) -> BodyRecord:
    return simulate(problem, grid, **kw)


def free_evolution(setup: SimSetup, eta0, grid: TimeGrid, planes=(), record_energy=True):
    """Unforced evolution from an initial elevation; returns (max|eta| per step, energy, state)."""
    system = setup.system(planes)
    state = SurfaceState(np.zeros(system.n_fs), np.where(system.frozen, 0.0, eta0))
    zero = np.zeros(setup.ops.dofmap.n_dof)

    class _Free:
        label = "free evolution"

        def load(self, t):
            return zero

    prob = _Free()
    eta_max, energy = [float(np.abs(state.eta).max())], []
    for n in range(grid.n_steps):
        t = n * grid.dt
        d1, phi, w = _stage(system, state, prob, t, {"step": n, "stage": 1})
        if record_energy:
            energy.append(system.energy(state, w))
        d2 = _stage(system, state.axpy(grid.dt / 2, d1), prob, t, {"step": n, "stage": 2})[0]
        d3 = _stage(system, state.axpy(grid.dt / 2, d2), prob, t, {"step": n, "stage": 3})[0]
        d4 = _stage(system, state.axpy(grid.dt, d3), prob, t, {"step": n, "stage": 4})[0]
        state = SurfaceState(
            state.phi + grid.dt / 6 * (d1.phi + 2 * d2.phi + 2 * d3.phi + d4.phi),
            state.eta + grid.dt / 6 * (d1.eta + 2 * d2.eta + 2 * d3.eta + d4.eta))
        eta_max.append(float(np.abs(state.eta).max()))
    return np.asarray(eta_max), np.asarray(energy), state


# ---------------------------------------------------------------------------
# infinite frequency
# ---------------------------------------------------------------------------

def solve_infinite_frequency(setup: SimSetup, k: int, js=None) -> dict:
    """``a_inf[j, k] = rho int phi_k n_j`` with ``phi_k = 0`` on the free surface."""
    flags = setup.mode_flags(k)
    system = setup.system(setup.dirichlet_planes(flags))
    js = tuple(sorted(setup.modes)) if js is None else tuple(js)
    try:
        phi = system.solver.solve(setup.mode_load(k), 0.0)
    except NonConvergenceError as exc:
        raise SimulationError(f"infinite-frequency solve failed: {exc}", {"mode": k}) from exc
    L = setup.generalized_loads(phi, js)
    return {j: setup.rho * setup.force_factor(j, flags) * L[j] for j in js}


def surface_energy(setup: SimSetup, state: SurfaceState, planes=()):
    system = setup.system(planes)
    zero = np.zeros(setup.ops.dofmap.n_dof)
    phi = system.laplace(state.phi, zero)
    return system.energy(state, system.vertical_velocity(phi, zero))

