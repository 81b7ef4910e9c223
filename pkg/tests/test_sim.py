import warnings

import numpy as np
import pytest

from sempi import desk
from sempi.errors import ParameterError, SimulationError, TruncationWarning
from sempi.sim import (DiffractionProblem, Mode, RadiationProblem, SurfaceState, body_forcing,
                       build_setup, compute_timegrid, default_duration, rk4_core, rk4_step,
                       rigid_modes, simulate, solve_infinite_frequency)
from sempi.symmetry import SymmetryConfig, diffraction_blocks
from sempi.waves import DampingZone, Environment, PseudoImpulse


@pytest.fixture(scope="module")
def small():
    mesh = desk.box_body_tank(n_body=1, n_out=2, nz_body=1, nz_below=1)
    modes = rigid_modes((1, 3, 5))
    modes[7] = Mode(7, "body", 0.0, {"x": "even", "y": "even"})
    return build_setup(mesh, 1, Environment(3.0), SymmetryConfig(("x", "y")), modes,
                       zones=(DampingZone("rect", 2.0, 4.0),))


def test_timegrid_formula():
    env = Environment(5.0)
    assert env.u_max == pytest.approx(7.0036, abs=1e-4)
    g1 = compute_timegrid(None, 1, env, 1.0, 10.0, dx_min=0.5)
    assert g1.dt == pytest.approx(0.5 / np.sqrt(49.05)) and abs(g1.dt - 0.0714) < 1e-4
    assert g1.n_steps * g1.dt >= 10.0
    g2 = compute_timegrid(None, 1, env, 0.5, 10.0, dx_min=0.5)
    assert g2.dt == pytest.approx(g1.dt / 2)
    assert g2.n_steps in (2 * g1.n_steps - 1, 2 * g1.n_steps)
    for C, T in ((0.0, 1.0), (1.5, 1.0), (1.0, 0.0)):
        with pytest.raises(ParameterError):
            compute_timegrid(None, 1, env, C, T, dx_min=0.5)
    assert default_duration(PseudoImpulse(0.5)) == pytest.approx(2 * PseudoImpulse(0.5).t0 + 12)


def test_rk4_core_scalar():
    # one classical RK4 step reproduces the fourth-order Taylor polynomial of exp(-dt)
    y1 = rk4_core(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)
    assert abs(y1[0] - (1 - 0.1 + 0.1 ** 2 / 2 - 0.1 ** 3 / 6 + 0.1 ** 4 / 24)) < 1e-15
    assert abs(y1[0] - np.exp(-0.1)) < 1e-7


def test_rk4_core_order():
    f = lambda t, y: np.array([y[1], -y[0]]) * (1 + 0.1 * np.sin(t))
    ref = None
    errs = []
    for n in (160, 10, 20, 40):
        y = np.array([1.0, 0.0])
        for i in range(n):
            y = rk4_core(f, y, 2.0 * i / n, 2.0 / n)
        if ref is None:
            ref = y
        else:
            errs.append(np.linalg.norm(y - ref))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(rates - 4) < 0.3)


def test_zero_state_is_fixed_point(small):
    prob = RadiationProblem(small, 7, PseudoImpulse(0.5))
    st = SurfaceState.zeros(small.system(prob.planes).n_fs)
    new = rk4_step(st, 0.3, prob, 0.05)
    assert not new.phi.any() and not new.eta.any()


def test_pressure_damping_trivial(small):
    sys = small.system(())
    n = sys.n_fs
    assert np.abs(sys.pressure_damping(np.full(n, 3.0))).max() < 1e-13
    xy = small.ops.fs.coords
    p = sys.pressure_damping(xy[:, 0] ** 2)
    assert np.abs(p).max() > 0
    assert np.all(p[small.c_p == 0] == 0)


def test_zero_normal_gives_zero_record(small):
    prob = RadiationProblem(small, 7, PseudoImpulse(0.5))
    grid = compute_timegrid(small.mesh, 1, small.env, 1.0, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        rec = simulate(prob, grid, extend=False)
    assert all(not v.any() for v in rec.loads.values())


def test_infinite_frequency_symmetric(small):
    a1 = solve_infinite_frequency(small, 1)
    a5 = solve_infinite_frequency(small, 5)
    assert a1[1] > 0 and solve_infinite_frequency(small, 3)[3] > 0
    assert a1[5] == pytest.approx(a5[1], rel=1e-6)
    assert a1[3] == 0.0    # surge and heave live in different symmetry classes


def test_radiation_causality_and_truncation(small):
    pi = PseudoImpulse(0.5)
    prob = RadiationProblem(small, 3, pi)
    short = compute_timegrid(small.mesh, 1, small.env, 1.0, 1.2 * pi.t0)
    with pytest.warns(TruncationWarning):
        r1 = simulate(prob, short, extend=False)
    long = short.extended(2 * short.n_steps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        r2 = simulate(prob, long, extend=False)
    n = len(r1.times) - 3
    assert np.abs(r1.loads[3][:n] - r2.loads[3][:n]).max() <= 1e-9 * np.abs(r2.loads[3]).max()
    # before the impulse velocity rises the recorded load stays negligible
    from sempi.waves import gaussian_velocity
    v = np.abs(gaussian_velocity(pi, r2.times))
    quiet = v <= 1e-6 * v.max()
    L = np.abs(r2.loads[3])
    assert quiet[0] and L[quiet & (r2.times < pi.t0)].max() < 1e-5 * L.max()
    assert r2.factors[1] == 0.0 and r2.factors[3] == 4.0


def test_body_forcing_lead_and_periodicity(small):
    pi = PseudoImpulse(0.5)
    op = small.ops.boundary("body")
    blk = diffraction_blocks(("x", "y"))[0]
    s1, lead = body_forcing(small.env, pi, blk, 0.4, op.points, op.normals, 0.05, 200)
    s2, _ = body_forcing(small.env, pi, blk, 0.4 + 2 * np.pi, op.points, op.normals, 0.05, 200)
    assert lead % 2 == 0 and s1.shape[1] == lead + 200
    assert np.abs(s1[:, 0]).max() < 1e-6 * np.abs(s1).max()
    p1 = DiffractionProblem(small, blk, pi, 0.4)
    p2 = DiffractionProblem(small, blk, pi, 0.4 + 2 * np.pi)
    assert p1.beta == p2.beta
    p1.prepare(0.1, 50)
    p2.prepare(0.1, 50)
    assert np.array_equal(p1._series, p2._series) and p1.t_start <= 0
    with pytest.raises(SimulationError):
        p1.forcing_at(p1.t_start + 0.013)


def test_zero_amplitude_diffraction(small):
    pi = PseudoImpulse(0.5, amplitude=0.0)
    prob = DiffractionProblem(small, diffraction_blocks(("x", "y"))[0], pi, 0.0)
    grid = compute_timegrid(small.mesh, 1, small.env, 1.0, 1.0)
    rec = simulate(prob, grid, extend=False)
    assert all(not v.any() for v in rec.loads.values())
