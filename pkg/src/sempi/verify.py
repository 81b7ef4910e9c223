"""Manufactured-solution verification: Poisson solves, L1 errors, p- and h-sweeps.

The manufactured field is imposed as Dirichlet data on the free-surface tag
(the top of the box) and as exact Neumann flux on every other tag.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import assembly, refelem
from .errors import StatisticsError
from .linalg import DirichletSolver, SolverConfig
from .mesh import HybridMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MMSCase:
    """Manufactured field with its gradient and Laplacian (vectorized over (n, 3) points)."""
    name: str
    phi: Callable
    grad: Callable
    laplacian: Callable
    dirichlet_tags: tuple = ("freesurface",)

    @classmethod
    def trig(cls, k, phase=(0.0, 0.0, 0.0), amplitude=1.0, name=None):
        """``A cos(kx x + px) cos(ky y + py) cos(kz z + pz)``."""
        k = np.asarray(k, dtype=float)
        p = np.asarray(phase, dtype=float)

        def parts(x):
            a = x * k + p
            return np.cos(a), np.sin(a)

        def phi(x):
            c, _ = parts(np.atleast_2d(x))
            return amplitude * c.prod(axis=1)

        def grad(x):
            c, s = parts(np.atleast_2d(x))
            g = np.empty_like(c)
            g[:, 0] = -k[0] * s[:, 0] * c[:, 1] * c[:, 2]
            g[:, 1] = -k[1] * c[:, 0] * s[:, 1] * c[:, 2]
            g[:, 2] = -k[2] * c[:, 0] * c[:, 1] * s[:, 2]
            return amplitude * g

        def lap(x):
            return -(k @ k) * phi(x)

        return cls(name or f"trig{tuple(np.round(k, 6))}", phi, grad, lap)

    @classmethod
    def box_default(cls, lengths, phase=(0.0, 0.0, 0.0)):
        """``cos(pi x/Lx) cos(pi y/Ly) cos(pi z/Lz)`` over a box of the given extents."""
        L = np.asarray(lengths, dtype=float)
        return cls.trig(np.pi / L, phase, name="box-default")

    @classmethod
    def sine_product(cls):
        def phi(x):
            x = np.atleast_2d(x)
            return np.sin(x).prod(axis=1)

        def grad(x):
            x = np.atleast_2d(x)
            s, c = np.sin(x), np.cos(x)
            return np.column_stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2],
                                    s[:, 0] * s[:, 1] * c[:, 2]])

        return cls("sine-product", phi, grad, lambda x: -3.0 * phi(x))

    @classmethod
    def linear(cls, c=(1.0, 2.0, -1.0), c0=0.0):
        c = np.asarray(c, dtype=float)
        return cls("linear", lambda x: np.atleast_2d(x) @ c + c0,
                   lambda x: np.broadcast_to(c, np.atleast_2d(x).shape).copy(),
                   lambda x: np.zeros(len(np.atleast_2d(x))))

    @classmethod
    def zero(cls):
        z = lambda x: np.zeros(len(np.atleast_2d(x)))
        return cls("zero", z, lambda x: np.zeros_like(np.atleast_2d(x), dtype=float), z)

    def translated(self, shift):
        """The same field moved by ``shift`` (for translation-invariance checks)."""
        s = np.asarray(shift, dtype=float)
        return MMSCase(self.name + "-shifted", lambda x: self.phi(np.atleast_2d(x) - s),
                       lambda x: self.grad(np.atleast_2d(x) - s),
                       lambda x: self.laplacian(np.atleast_2d(x) - s), self.dirichlet_tags)


@dataclass
class MMSResult:
    error: float
    n_dof: int
    n_elements: int
    order: int
    seconds: float
    solution: np.ndarray = field(repr=False, default=None)


def l1_error(mesh: HybridMesh, dofmap, phi_h, exact, degree=None) -> float:
    """Global L1 norm of ``phi_h - exact`` by element quadrature."""
    P = dofmap.order
    degree = 2 * P + 1 if degree is None else degree
    total = 0.0
    for shape in ("tet", "prism"):
        dofs = dofmap.element_dofs(shape)
        if not len(dofs):
            continue
        ref = refelem.build_reference(shape, P)
        qp, qw = refelem.volume_quadrature(shape, degree)
        H, _ = ref.basis_at(qp)
        geo = refelem.build_reference(shape, mesh.geometry_order)
        hg, _ = geo.basis_at(qp)
        emap = assembly.mesh_element_maps(mesh, shape, qp)
        x = np.einsum("qg,ega->eqa", hg, mesh.geometry_nodes(shape))
        vals = phi_h[dofs] @ H.T
        ex = np.asarray(exact(x.reshape(-1, 3))).reshape(vals.shape)
        total += float((np.abs(vals - ex) * emap.det * qw[None]).sum())
    return total


def run_mms_detail(mesh: HybridMesh, P: int, case: MMSCase, method="direct",
                   cfg: SolverConfig | None = None) -> MMSResult:
    t0 = time.perf_counter()
    dm = assembly.build_dofmap(mesh, P)
    A = assembly.assemble_stiffness(mesh, dm)
    # weak form of lap(phi) = f:  A phi = int dphi/dn v - int f v
    b = -assembly.assemble_volume_load(mesh, dm, case.laplacian)
    fixed = np.unique(np.concatenate([dm.nodes_on(t) for t in case.dirichlet_tags]))
    for tag in mesh.present_tags():
        if tag.name in case.dirichlet_tags:
            continue
        b += assembly.assemble_neumann_load(
            mesh, dm, tag, lambda p, n: np.einsum("ij,ij->i", case.grad(p), n))
    solver = DirichletSolver(A, fixed, method=method, cfg=cfg)
    phi = solver.solve(b, case.phi(dm.coords[fixed]))
    err = l1_error(mesh, dm, phi, case.phi)
    return MMSResult(err, dm.n_dof, mesh.n_elements, P, time.perf_counter() - t0, phi)


def run_mms(mesh: HybridMesh, P: int, case: MMSCase, method="direct") -> float:
    """L1 error of the order-P solution of the manufactured Poisson problem."""
    return run_mms_detail(mesh, P, case, method).error


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def max_edge_length(mesh: HybridMesh) -> float:
    edges = []
    for conn, pairs in ((mesh.tets, ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))),
                        (mesh.prisms, ((0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5),
                                       (0, 3), (1, 4), (2, 5)))):
        for a, b in pairs:
            if len(conn):
                edges.append(np.linalg.norm(mesh.vertices[conn[:, a]] - mesh.vertices[conn[:, b]],
                                            axis=1))
    return float(np.concatenate(edges).max())


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)      # dicts: mesh, P, n_elm, n_dof, h, error
    rates: dict = field(default_factory=dict)     # P -> fitted algebraic rate (h-sweeps)
    floor: float = 0.0

    def errors(self, P=None, mesh=None):
        return np.array([r["error"] for r in self.rows
                         if (P is None or r["P"] == P) and (mesh is None or r["mesh"] == mesh)])

    def decay_orders(self, mesh=None):
        e = self.errors(mesh=mesh)
        return float(np.log10(e[0] / e[-1]))

    def monotone(self, mesh=None):
        """Strictly decreasing errors, allowing a plateau within 10x of the floor."""
        e = self.errors(mesh=mesh)
        for a, b in zip(e[:-1], e[1:]):
            if b >= a and b > 10 * self.floor:
                return False
        return True

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mesh", "P", "n_elm", "n_dof", "h", "error", "rate"])
        for r in self.rows:
            rate = self.rates.get(r["P"], "")
            w.writerow([r["mesh"], r["P"], r["n_elm"], r["n_dof"], format(r["h"], ".17g"),
                        format(r["error"], ".17g"), "" if rate == "" else format(rate, ".17g")])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _floor(mesh, case):
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    vol = float(np.prod(hi - lo))
    amp = float(np.abs(case.phi(mesh.vertices)).max()) or 1.0
    return 1e-14 * vol * amp


def p_sweep(mesh: HybridMesh, orders, case: MMSCase, method="direct") -> ConvergenceReport:
    rep = ConvergenceReport(floor=_floor(mesh, case))
    h = max_edge_length(mesh)
    for P in orders:
        res = run_mms_detail(mesh, int(P), case, method)
        log.info("p-sweep %s P=%d dofs=%d error=%.3e (%.1fs)", mesh.name, P, res.n_dof,
                 res.error, res.seconds)
        rep.rows.append(dict(mesh=mesh.name, P=int(P), n_elm=mesh.n_elements, n_dof=res.n_dof,
                             h=h, error=res.error))
    return rep


def fit_rate(h, err, floor=0.0):
    """Least-squares slope of log(err) against log(h), skipping points near the floor."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > 10 * floor
    if keep.sum() < 2:
        raise StatisticsError("not enough points above the round-off floor to fit a rate")
    return float(np.polyfit(np.log(h[keep]), np.log(err[keep]), 1)[0])


def h_sweep(meshes, orders, case: MMSCase, method="direct") -> ConvergenceReport:
    meshes = list(meshes)
    if len(meshes) < 3:
        raise StatisticsError("an h-sweep needs at least three mesh levels")
    rep = ConvergenceReport(floor=_floor(meshes[0], case))
    hs = [max_edge_length(m) for m in meshes]
    for P in orders:
        errs = []
        for m, h in zip(meshes, hs):
            res = run_mms_detail(m, int(P), case, method)
            log.info("h-sweep %s P=%d dofs=%d error=%.3e (%.1fs)", m.name, P, res.n_dof,
                     res.error, res.seconds)
            rep.rows.append(dict(mesh=m.name, P=int(P), n_elm=m.n_elements, n_dof=res.n_dof,
                                 h=h, error=res.error))
            errs.append(res.error)
        rep.rates[int(P)] = fit_rate(hs, errs, rep.floor)
    return rep
