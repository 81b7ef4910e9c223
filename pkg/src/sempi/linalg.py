"""Sparse symmetric positive-definite solves.

Preconditioned conjugate gradients is the iterative path; a cached sparse
direct factorization serves repeated solves with one fixed matrix (every
time-stepping stage reuses the same Laplace operator), and a dense Cholesky
factorization is kept as a test oracle for small systems.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergenceError, ParameterError

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "diagonal", "incomplete-factorization")


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None       # default 10*sqrt(N) + 200
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if not 0 < self.rel_tolerance <= 1e-2:
            raise ParameterError(f"rel_tolerance must lie in (0, 1e-2], got {self.rel_tolerance}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ParameterError(f"unknown preconditioner {self.preconditioner!r}")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ParameterError("max_iterations must be non-negative")

    def iteration_cap(self, n):
        if self.max_iterations is not None:
            return self.max_iterations
        return int(10 * np.sqrt(n)) + 200


@dataclass
class SolveReport:
    iterations: int
    residual: float                     # final relative residual ||Ax-b|| / ||b||
    converged: bool
    history: list = field(default_factory=list)


def _preconditioner(A, kind):
    if kind == "none":
        return lambda r: r
    if kind == "diagonal":
        d = A.diagonal()
        if np.any(d <= 0):
            raise ParameterError("diagonal preconditioner needs a positive diagonal")
        inv = 1.0 / d
        return lambda r: inv * r
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-4, fill_factor=10)
    return ilu.solve


def solve_spd(A, b, cfg: SolverConfig | None = None, x0=None):
    """Preconditioned CG; returns ``(x, SolveReport)``.

    Raises NonConvergenceError (carrying the best iterate and the residual
    history) on breakdown or when the iteration cap is reached.
    """
    cfg = cfg or SolverConfig()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, [0.0])
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    history = [rel]
    if rel <= cfg.rel_tolerance:
        return x, SolveReport(0, rel, True, history)
    M = _preconditioner(A, cfg.preconditioner)
    z = M(r)
    p = z.copy()
    rz = r @ z
    best, best_rel = x.copy(), rel
    cap = cfg.iteration_cap(n)
    for it in range(1, cap + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0 or not np.isfinite(pAp):
            raise NonConvergenceError(f"CG breakdown at iteration {it} (p^T A p = {pAp:.3e})",
                                      best=best, history=history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if rel < best_rel:
            best, best_rel = x.copy(), rel
        if rel <= cfg.rel_tolerance:
            # guard against drift of the recursive residual
            true_rel = np.linalg.norm(b - A @ x) / bnorm
            if true_rel <= cfg.rel_tolerance:
                return x, SolveReport(it, true_rel, True, history)
            r = b - A @ x
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergenceError(f"CG did not converge in {cap} iterations (residual {best_rel:.3e})",
                              best=best, history=history)


def solve_dense(A, b):
    """Dense Cholesky oracle (small systems only)."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if A.shape[0] > 2000:
        raise ParameterError("dense oracle limited to 2000 unknowns")
    return sla.cho_solve(sla.cho_factor(A), np.asarray(b, dtype=float))


class Factorized:
    """Sparse direct factorization of a fixed SPD matrix for repeated solves."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        self._A = A
        self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})
        self.solves = 0

    def solve(self, b):
        self.solves += 1
        return self._lu.solve(np.asarray(b, dtype=float))

    def residual(self, x, b):
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        return np.linalg.norm(self._A @ x - b) / (nb if nb else 1.0)


class DirichletSolver:
    """Solver for ``A phi = b`` with prescribed values on a fixed node set.

    The free-free block is factorized once; each call supplies the load for all
    nodes and the Dirichlet values, and receives the full nodal solution.
    With ``method='cg'`` every call runs PCG (warm-started from the last
    solution) instead of the direct factorization.
    """

    def __init__(self, A, fixed, method="direct", cfg: SolverConfig | None = None):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(fixed, dtype=np.int64)] = True
        self.fixed = np.nonzero(mask)[0]
        self.free = np.nonzero(~mask)[0]
        if not len(self.fixed):
            raise ParameterError("DirichletSolver needs at least one fixed node")
        self.A_ff = A[self.free][:, self.free].tocsr()
        self.A_fd = A[self.free][:, self.fixed].tocsr()
        self.method = method
        self.cfg = cfg or SolverConfig()
        self.reports = []
        self._last = None
        if method == "direct":
            self._fact = Factorized(self.A_ff)
        elif method != "cg":
            raise ParameterError(f"unknown solve method {method!r}")

    def solve(self, b, g):
        b = np.asarray(b, dtype=float)
        g = np.broadcast_to(np.asarray(g, dtype=float), (len(self.fixed),))
        rhs = b[self.free] - self.A_fd @ g
        if self.method == "direct":
            xf = self._fact.solve(rhs)
        else:
            xf, rep = solve_spd(self.A_ff, rhs, self.cfg, x0=self._last)
            self.reports.append(rep)
            self._last = xf
        phi = np.empty(self.n)
        phi[self.free] = xf
        phi[self.fixed] = g
        return phi
