import numpy as np
import pytest

from sempi import desk
from sempi.errors import StatisticsError
from sempi.verify import (ConvergenceReport, MMSCase, fit_rate, h_sweep, max_edge_length,
                          p_sweep, run_mms, run_mms_detail)


@pytest.mark.parametrize("case", [MMSCase.trig((0.8, 0.5, 1.1), (0.3, 0.2, 0.1)),
                                  MMSCase.sine_product(), MMSCase.box_default((2, 2, 1))])
def test_forcing_consistent_with_field(case, rng):
    x = rng.uniform(-1, 1, size=(20, 3))
    h = 1e-3
    lap = sum((case.phi(x + h * e) - 2 * case.phi(x) + case.phi(x - h * e)) / h ** 2
              for e in np.eye(3))
    assert np.abs(lap - case.laplacian(x)).max() < 1e-6 * max(1.0, np.abs(lap).max())
    h = 1e-6
    g = np.column_stack([(case.phi(x + h * e) - case.phi(x - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.abs(g - case.grad(x)).max() < 1e-8


@pytest.mark.parametrize("P", [1, 2, 3])
def test_linear_field_is_exact(tank, P):
    assert run_mms(tank, P, MMSCase.linear((1.0, 2.0, -1.0))) <= 1e-9


def test_zero_field(tank):
    assert run_mms(tank, 2, MMSCase.zero()) == 0.0


def test_translation_invariance(tank):
    case = MMSCase.trig((0.9, 0.6, 1.2), (0.3, 0.2, 0.1))
    shift = (3.5, -1.25, 0.0)
    e0 = run_mms(tank, 2, case)
    e1 = run_mms(tank.translated(shift), 2, case.translated(shift))
    assert e1 == pytest.approx(e0, rel=1e-8)


def test_detail_and_methods(tank):
    case = MMSCase.sine_product()
    r = run_mms_detail(tank, 2, case)
    assert r.n_elements == tank.n_elements and len(r.solution) == r.n_dof
    assert run_mms(tank, 2, case, method="cg") == pytest.approx(r.error, rel=1e-6)


def test_p_sweep_decays(tank):
    rep = p_sweep(tank, [1, 2, 3, 4], MMSCase.trig((np.pi / 4, np.pi / 4, np.pi / 2), (0.3, 0.2, 0.1)))
    e = rep.errors()
    assert rep.monotone() and np.all(e > 0) and rep.decay_orders() > 2
    text = rep.to_csv()
    assert text.splitlines()[0] == "mesh,P,n_elm,n_dof,h,error,rate" and len(text.splitlines()) == 5


def test_finer_mesh_is_better():
    case = MMSCase.trig((np.pi / 4, np.pi / 4, np.pi / 2), (0.3, 0.2, 0.1))
    coarse = p_sweep(desk.box_tank(2, 2, 1, 1, 1, 1), [1, 2, 3], case).errors()
    fine = p_sweep(desk.box_tank(2, 2, 1, 2, 2, 2), [1, 2, 3], case).errors()
    assert np.all(fine < coarse)


def test_h_sweep_p2_rate():
    meshes = [desk.box_tank(2, 2, 1, n, n, n) for n in (2, 4, 8)]
    assert max_edge_length(meshes[0]) == pytest.approx(2 * max_edge_length(meshes[1]))
    rep = h_sweep(meshes, [2], MMSCase.trig((np.pi / 4, np.pi / 4, np.pi / 2), (0.3, 0.2, 0.1)))
    assert abs(rep.rates[2] - 3) < 0.3


def test_fit_rate_and_errors():
    h = np.array([1.0, 0.5, 0.25])
    assert fit_rate(h, 3 * h ** 2.5) == pytest.approx(2.5)
    assert fit_rate(np.r_[h, 0.125], np.r_[h ** 4, 1e-15], floor=1e-15) == pytest.approx(4)
    with pytest.raises(StatisticsError):
        fit_rate(h, [1e-15, 1e-15, 1e-15], floor=1e-15)
    with pytest.raises(StatisticsError):
        h_sweep([desk.box_tank()] * 2, [1], MMSCase.zero())


def test_monotone_allows_floor():
    rep = ConvergenceReport(floor=1e-14)
    for e in (1e-2, 1e-6, 5e-14, 8e-14):
        rep.rows.append(dict(mesh="m", P=1, n_elm=1, n_dof=1, h=1.0, error=e))
    assert rep.monotone()
    rep.rows[1]["error"] = 1e-1
    assert not rep.monotone()
