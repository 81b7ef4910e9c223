import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sempi import desk
from sempi.errors import DivisionGuardError, ParameterError, TruncationWarning
from sempi.post import (HydroResult, NondimSpec, added_mass_damping, excitation_ratio,
                        fd4_derivative, force_exponent, froude_krylov, mass_exponent,
                        nondimensionalize, omega_grid, spectrum)
from sempi.sim import build_setup, rigid_modes
from sempi.symmetry import SymmetryConfig
from sempi.waves import (Environment, PseudoImpulse, gaussian_acceleration, gaussian_impulse,
                         gaussian_spectrum, gaussian_velocity, omega_limit)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.floats(0.01, 0.5),
       st.floats(-3, 3))
def test_fd4_exact_on_quartics(c, dt, t0):
    t = t0 + dt * np.arange(12)
    f = np.polyval(c, t)
    d = np.polyval(np.polyder(c), t)
    assert np.abs(fd4_derivative(f, dt) - d).max() < 1e-9 * max(1.0, np.abs(d).max())


def test_fd4_examples():
    t = 0.37 * np.arange(9)
    assert np.abs(fd4_derivative(t ** 2, 0.37) - 2 * t).max() < 1e-12
    assert np.abs(fd4_derivative(np.full(7, 4.2), 0.1)).max() < 1e-12
    t = 0.01 * np.arange(700)
    assert np.abs(fd4_derivative(np.sin(t), 0.01) - np.cos(t)).max() < 1e-8
    with pytest.raises(ParameterError):
        fd4_derivative(np.ones(4), 0.1)


def test_fd4_order():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        t = dt * np.arange(int(round(2 / dt)) + 1)
        errs.append(np.abs(fd4_derivative(np.exp(t), dt) - np.exp(t)).max())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 3.7)


def test_spectrum_pulse_and_linearity(rng):
    f = np.zeros(64)
    f[0] = 1.0
    w = np.linspace(0.1, 20, 30)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        assert np.allclose(np.abs(spectrum(f, 0.1, w)), 0.1, rtol=0, atol=1e-15)
    a, b = rng.normal(size=(2, 100)) * np.hanning(100)
    lhs = spectrum(2 * a - 3 * b, 0.05, w, check_decay=False)
    rhs = 2 * spectrum(a, 0.05, w, check_decay=False) - 3 * spectrum(b, 0.05, w, check_decay=False)
    assert np.abs(lhs - rhs).max() < 1e-13 * np.abs(lhs).max()


def test_spectrum_of_gaussian():
    pi = PseudoImpulse(0.4)
    dt = 0.02
    t = dt * np.arange(int(2 * pi.t0 / dt) + 2)
    w = omega_grid(pi, "velocity", 200)
    num = spectrum(gaussian_impulse(pi, t), dt, w)
    ref = gaussian_spectrum(pi, w)
    assert np.abs(num / ref - 1).max() < 1e-6
    fw, vals = spectrum(gaussian_impulse(pi, t), dt)
    assert len(vals) == 1 + (1 << int(np.ceil(np.log2(8 * len(t))))) // 2


def test_spectrum_checks():
    with pytest.warns(TruncationWarning):
        spectrum(np.ones(20), 0.1, [1.0])
    with pytest.raises(ParameterError):
        spectrum(np.zeros(5), 0.1, [1.0], times=[0, 0.1, 0.2, 0.35, 0.4])
    with pytest.raises(ParameterError):
        spectrum(np.zeros(5), 0.0, [1.0])


def test_time_offset_is_respected():
    pi = PseudoImpulse(0.5)
    dt = 0.01
    t = -1.0 + dt * np.arange(int((2 * pi.t0 + 1) / dt) + 2)
    w = np.linspace(0.5, 5, 10)
    val = spectrum(gaussian_impulse(pi, t), dt, w, times=t)
    assert np.abs(val / gaussian_spectrum(pi, w) - 1).max() < 1e-6


def _identity_run(pi, a0, b0, scale=1.0):
    dt = 0.01
    t = dt * np.arange(int(2 * pi.t0 / dt) + 2)
    x = scale * gaussian_impulse(pi, t)
    F = -a0 * scale * gaussian_acceleration(pi, t) - b0 * scale * gaussian_velocity(pi, t)
    return added_mass_damping(F, x, dt, omega_grid(pi, "velocity", 400))


def test_pipeline_identity():
    # the window must hold the whole pulse: a cut tail of relative size eps
    # returns as an O(eps / omega^2) error in a
    pi = PseudoImpulse(0.4, eps=1e-16)
    a, b = _identity_run(pi, 2.0, 3.0)
    assert np.abs(a - 2).max() < 1e-8 and np.abs(b - 3).max() < 1e-8
    a10, b10 = _identity_run(pi, 2.0, 3.0, scale=10.0)
    assert np.allclose(a10, a, rtol=1e-12) and np.allclose(b10, b, rtol=1e-12)


def test_division_guard():
    pi = PseudoImpulse(1.0, eps=1e-30)
    dt = 0.01
    t = dt * np.arange(800)
    x = gaussian_impulse(pi, t)
    with pytest.raises(DivisionGuardError):
        added_mass_damping(x, x, dt, [1.0, 200.0])
    with pytest.raises(ParameterError):
        added_mass_damping(x, x, dt, [0.0, 1.0])
    assert np.allclose(excitation_ratio(2 * x, x, dt, [1.0, 2.0]), 2.0)


def test_exponents():
    assert mass_exponent(3, 3) == 3 and mass_exponent(5, 5) == 5 and mass_exponent(1, 5) == 4
    assert force_exponent(1) == 2 and force_exponent(4) == 3
    assert mass_exponent(7, 7) == 3 and force_exponent(8) == 2


def test_nondimensionalize():
    rho, L, g = 1000.0, 2.0, 9.81
    w = np.array([1.0, 2.0])
    res = HydroResult(w, a={(3, 3): np.full(2, 2 * rho * L ** 3)},
                      b={(5, 5): rho * L ** 5 * w},
                      Xs={4: np.full(2, rho * g * L ** 3 * (1 + 1j))},
                      a_inf={(1, 5): 7 * rho * L ** 4})
    nd = nondimensionalize(res, NondimSpec(L, g, rho))
    assert np.allclose(nd.a[(3, 3)], 2) and np.allclose(nd.b[(5, 5)], 1)
    assert np.allclose(nd.Xs[4], 1 + 1j) and nd.a_inf[(1, 5)] == pytest.approx(7)
    assert np.allclose(nd.omegas, w * np.sqrt(L / g))
    assert nd.columns()[0][0] == "omega_bar"
    with pytest.raises(ParameterError):
        NondimSpec(0.0)


def test_csv_is_deterministic():
    w = np.linspace(0.5, 1.5, 5)
    res = HydroResult(w, a={(1, 1): w ** 2}, b={(1, 1): np.sqrt(w)},
                      Xs={1: w * (1 - 2j)}, X0={1: w + 0j}, a_inf={(1, 1): 3.0})
    text = res.to_csv()
    assert text == res.to_csv()
    head = text.splitlines()[0].split(",")
    assert head == ["omega", "a_11", "b_11", "ReXs_1", "ImXs_1", "ReX0_1", "ImX0_1",
                    "ReX_1", "ImX_1"]
    assert res.to_csv(L=2.0).splitlines()[0].split(",")[1] == "omega_bar"
    assert res.a_inf_csv().splitlines() == ["j,k,a_inf", "1,1,3"]
    assert res.restrict(0.7, 1.2).omegas.tolist() == [0.75, 1.0]
    assert len(res.to_jsonl().splitlines()) == len(res.columns())


@pytest.fixture(scope="module")
def box_setup():
    mesh = desk.box_body_tank(n_body=1, n_out=2, nz_body=1, nz_below=1)
    return build_setup(mesh, 1, Environment(3.0), SymmetryConfig(("x", "y")), rigid_modes())


def test_froude_krylov_long_wave_limit(box_setup):
    # waterplane of the full 2 x 2 box
    X0 = froude_krylov(box_setup, [1e-3], 0.3, modes=[3])
    assert X0[3][0].real == pytest.approx(1000 * 9.81 * 4.0, rel=1e-4)


def test_froude_krylov_reflection(box_setup):
    w = np.array([0.8, 1.5])
    a = froude_krylov(box_setup, w, 0.3)
    b = froude_krylov(box_setup, w, np.pi - 0.3)
    for j in range(1, 7):
        assert np.abs(np.abs(a[j]) - np.abs(b[j])).max() <= 1e-10 * max(1.0, np.abs(a[j]).max())
