import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sempi.errors import ParameterError, ParityError, SchedulingError, SpectralInputError
from sempi.symmetry import (SymmetryConfig, block_for_mode, decomposed_body_bc,
                            decomposed_phase, decomposed_phase_gradient, diffraction_blocks,
                            fft_synthesis, inverse_transform, mode_flags, radiation_flags,
                            recombine_forces, schedule)


def test_radiation_flag_table():
    assert radiation_flags(3, "x") == 1
    assert radiation_flags(1, "y") == 0
    assert mode_flags(6, ("x", "y")) == {"x": 0, "y": 0}
    table = {k: (radiation_flags(k, "x"), radiation_flags(k, "y")) for k in range(1, 7)}
    assert table == {1: (1, 0), 2: (0, 1), 3: (1, 1), 4: (0, 1), 5: (1, 0), 6: (0, 0)}


def test_generalized_modes_need_parity():
    with pytest.raises(ParityError):
        radiation_flags(7, "x")
    with pytest.raises(ParityError):
        radiation_flags(7, "y", {7: {"x": "even"}})
    with pytest.raises(ParityError):
        radiation_flags(7, "x", {7: {"x": "sideways"}})
    par = {7: {"x": "even", "y": "even"}, 8: {"x": "even", "y": "odd"}}
    assert mode_flags(8, ("x", "y"), par) == {"x": 1, "y": 0}
    with pytest.raises(ParameterError):
        radiation_flags(0, "x")
    with pytest.raises(ParameterError):
        radiation_flags(1, "z")


def test_blocks():
    two = {b.label: b.flags() for b in diffraction_blocks(("x", "y"))}
    assert two == {"SS": {"x": 1, "y": 1}, "SA": {"x": 0, "y": 1},
                   "AS": {"x": 1, "y": 0}, "AA": {"x": 0, "y": 0}}
    one = diffraction_blocks(("y",))
    assert [b.label for b in one] == ["S", "A"] and one[1].dirichlet_planes() == ("y",)
    full = diffraction_blocks(())
    assert [b.label for b in full] == ["Full"] and full[0].flags() == {}
    assert SymmetryConfig(("y", "x")).multiplicity == 4


def test_force_routing():
    planes = ("x", "y")
    route = {j: block_for_mode(j, planes).label for j in range(1, 7)}
    assert route == {1: "AS", 2: "SA", 3: "SS", 4: "SA", 5: "AS", 6: "AA"}
    assert [b.label for b in schedule(("x",), [1, 2, 3])] == ["S", "A"]
    res = {"SS": {3: np.array([1.0, 2.0])}}
    assert np.allclose(recombine_forces(res, planes, [3])[3], [4.0, 8.0])
    with pytest.raises(SchedulingError):
        recombine_forces(res, planes, [6])
    with pytest.raises(ParityError):
        schedule(planes, [7])


@pytest.mark.parametrize("beta", np.arange(17) * np.pi / 8)
def test_partition_identity(beta, rng):
    pts = rng.uniform(-10, 10, size=(1000, 3))
    k = 0.7
    total = sum(decomposed_phase(b, k, beta, pts) for b in ("SS", "SA", "AS", "AA"))
    full = np.exp(-1j * k * (pts[:, 0] * np.cos(beta) + pts[:, 1] * np.sin(beta)))
    assert np.abs(total - full).max() < 1e-14
    for plane in ("x", "y"):
        one = sum(decomposed_phase(b, k, beta, pts, plane) for b in ("S", "A"))
        assert np.abs(one - full).max() < 1e-14


def test_vanishing_blocks(rng):
    pts = rng.uniform(-3, 3, size=(50, 3))
    for b in ("SA", "AA"):
        assert np.abs(decomposed_phase(b, 1.1, 0.0, pts)).max() == 0
    pts[:, 1] = 0
    for b in ("SA", "AA"):
        assert np.abs(decomposed_phase(b, 1.1, 0.4, pts)).max() == 0


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["SS", "SA", "AS", "AA"]), st.floats(-4, 4), st.floats(-4, 4),
       st.floats(0, 2 * np.pi))
def test_phase_gradient_matches_differences(block, x, y, beta):
    k, h = 0.9, 1e-6
    _, ex, ey = decomposed_phase_gradient(block, k, beta, x, y)
    f = lambda a, b: decomposed_phase_gradient(block, k, beta, a, b)[0]
    assert abs((f(x + h, y) - f(x - h, y)) / (2 * h) - ex) < 1e-8
    assert abs((f(x, y + h) - f(x, y - h)) / (2 * h) - ey) < 1e-8


def test_inverse_transform_of_gaussian():
    # F{exp(-t^2/2)} = sqrt(2 pi) exp(-w^2/2)
    w = np.linspace(0, 12, 1201)
    X = np.sqrt(2 * np.pi) * np.exp(-w ** 2 / 2)
    t = np.linspace(-3, 3, 13)
    assert np.abs(inverse_transform(w, X, t) - np.exp(-t ** 2 / 2)).max() < 1e-12
    w2 = np.concatenate([-w[:0:-1], w])
    X2 = np.sqrt(2 * np.pi) * np.exp(-w2 ** 2 / 2)
    assert np.abs(inverse_transform(w2, X2, t) - np.exp(-t ** 2 / 2)).max() < 1e-12


def test_spectral_input_errors():
    w = np.linspace(-1, 1, 11)
    with pytest.raises(SpectralInputError):
        inverse_transform(w, w + 0j, [0.0])
    with pytest.raises(SpectralInputError):
        inverse_transform([0.0, 0.1, 0.3], [1, 1, 1], [0.0])
    with pytest.raises(SpectralInputError):
        inverse_transform([0.0, 0.1], [1j, 1], [0.0])
    with pytest.raises(SpectralInputError):
        fft_synthesis(np.ones(10), 0.1, 16)


def test_fft_synthesis_matches_direct(rng):
    dw, n_fft = 0.05, 256
    X = rng.normal(size=(3, 60)) + 1j * rng.normal(size=(3, 60))
    X[:, 0] = X[:, 0].real
    fast = fft_synthesis(X, dw, n_fft)
    t = 2 * np.pi * np.arange(n_fft) / (n_fft * dw)
    slow = inverse_transform(dw * np.arange(60), X, t)
    assert np.abs(fast - slow).max() < 1e-10 * np.abs(slow).max()


def _body_bc_inputs(rng, block_sign=1):
    w = np.linspace(0.02, 6, 300)
    Z = np.exp(-w ** 2 / 2) * np.exp(-2j * w)
    pts = rng.uniform(-1, 1, size=(6, 3))
    pts[:, 2] = -np.abs(pts[:, 2])
    normals = rng.normal(size=(6, 3))
    return w, Z, pts, normals


def _grad(block, w, pts, beta=0.6, h=2.0, g=9.81):
    from sempi.waves import Environment, IncidentWaveSpec, incident_fields
    env = Environment(h, g)
    spec = IncidentWaveSpec.build(beta, w, env)
    return np.array([incident_fields(spec, env, pts, m, block)[1] for m in range(len(w))])


def test_body_bc_blocks_sum_to_full(rng):
    w, Z, pts, normals = _body_bc_inputs(rng)
    t = np.linspace(0, 6, 25)
    full = decomposed_body_bc("Full", _grad("Full", w, pts), Z, normals, w, t)
    parts = sum(decomposed_body_bc(b, _grad(b, w, pts), Z, normals, w, t)
                for b in ("SS", "SA", "AS", "AA"))
    assert np.abs(parts - full).max() < 1e-10 * np.abs(full).max()
    assert np.abs(decomposed_body_bc("SS", _grad("SS", w, pts), 0 * Z, normals, w, t)).max() == 0


def test_body_bc_parity(rng):
    w, Z, pts, normals = _body_bc_inputs(rng)
    t = np.linspace(0, 6, 25)
    mirror = pts * [1, -1, 1]
    nmirror = normals * [1, -1, 1]
    # under y -> -y the SS forcing is even and the SA forcing odd
    for block, sign in (("SS", 1), ("SA", -1)):
        a = decomposed_body_bc(block, _grad(block, w, pts), Z, normals, w, t)
        b = decomposed_body_bc(block, _grad(block, w, mirror), Z, nmirror, w, t)
        assert np.abs(b - sign * a).max() < 1e-12 * np.abs(a).max()
