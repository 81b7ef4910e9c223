import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from sempi import assembly, desk
from sempi.errors import NonConvergenceError, ParameterError
from sempi.linalg import DirichletSolver, Factorized, SolverConfig, solve_dense, solve_spd


def lap1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_identity():
    b = np.arange(5.0) - 2
    x, rep = solve_spd(sp.identity(5, format="csr"), b)
    assert np.allclose(x, b) and rep.iterations <= 1


def test_tridiagonal():
    A = lap1d(10)
    x_true = np.arange(1.0, 11.0)
    x, rep = solve_spd(A, A @ x_true)
    assert np.abs(x - x_true).max() < 1e-9
    assert rep.converged and rep.residual <= 1e-10


def test_warm_start_exact():
    A = lap1d(10)
    x_true = np.arange(1.0, 11.0)
    _, rep = solve_spd(A, A @ x_true, x0=x_true)
    assert rep.iterations == 0


def test_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(rel_tolerance=0.1)
    with pytest.raises(ParameterError):
        SolverConfig(preconditioner="multigrid")
    assert SolverConfig().iteration_cap(100) == 300


def test_non_convergence_carries_history():
    A = lap1d(200)
    with pytest.raises(NonConvergenceError) as exc:
        solve_spd(A, np.ones(200), SolverConfig(max_iterations=3, preconditioner="none"))
    assert len(exc.value.history) == 4 and exc.value.best is not None


def test_a_norm_error_decreases():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(30, 30))
    A = sp.csr_matrix(B @ B.T + 30 * np.eye(30))
    b = rng.normal(size=30)
    x_star = solve_dense(A, b)
    errs = []
    for it in range(1, 15):
        try:
            x, _ = solve_spd(A, b, SolverConfig(max_iterations=it, preconditioner="none"))
        except NonConvergenceError as exc:
            x = exc.best
        e = x - x_star
        errs.append(e @ (A @ e))
    assert all(b2 <= b1 * (1 + 1e-12) for b1, b2 in zip(errs, errs[1:]))


def _mms_system():
    m = desk.box_tank(1.0, 1.0, 1.0, 2, 2, 2)
    ops = assembly.assemble_operators(m, 2)
    dm = ops.dofmap
    fs = dm.nodes_on("freesurface")
    A2, b2 = assembly.impose_dirichlet(ops.stiffness, dm.coords[:, 0] * 0 + 1.0, fs, 0.0)
    return A2, b2


def test_diagonal_preconditioner_helps():
    A, b = _mms_system()
    _, r_none = solve_spd(A, b, SolverConfig(preconditioner="none"))
    _, r_diag = solve_spd(A, b, SolverConfig(preconditioner="diagonal"))
    _, r_ilu = solve_spd(A, b, SolverConfig(preconditioner="incomplete-factorization"))
    assert r_diag.iterations <= r_none.iterations
    assert r_ilu.converged


def test_dense_oracle_agrees():
    A, b = _mms_system()
    x, _ = solve_spd(A, b)
    assert np.abs(x - solve_dense(A, b)).max() < 1e-8 * np.abs(x).max()
    f = Factorized(A)
    assert f.residual(f.solve(b), b) < 1e-12


def test_warm_start_uniqueness():
    A, b = _mms_system()
    cfg = SolverConfig()
    x_cold, _ = solve_spd(A, b, cfg)
    x_warm, _ = solve_spd(A, b, cfg, x0=x_cold + 1e-3)
    assert np.linalg.norm(x_warm - x_cold) <= 1e-6 * np.linalg.norm(x_cold)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_dirichlet_solver_matches_elimination(seed):
    rng = np.random.default_rng(seed)
    m = desk.box_tank(1.0, 1.0, 1.0, 1, 1, 2)
    ops = assembly.assemble_operators(m, 2)
    dm = ops.dofmap
    fixed = dm.nodes_on("freesurface")
    b = rng.normal(size=dm.n_dof)
    g = rng.normal(size=len(fixed))
    A2, b2 = assembly.impose_dirichlet(ops.stiffness, b, fixed, g)
    ref = solve_dense(A2, b2)
    for method in ("direct", "cg"):
        phi = DirichletSolver(ops.stiffness, fixed, method).solve(b, g)
        assert np.abs(phi - ref).max() < 1e-7 * max(1.0, np.abs(ref).max())
        assert np.array_equal(phi[fixed], g)
