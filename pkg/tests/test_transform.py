import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slitflow import NumericalError, SlitVector, ValidationError, make_slits
from slitflow import loewner as L
from slitflow import transform as TR
from slitflow.bmd_kernel import b_bmd, solve_kernel


@pytest.fixture(scope="module")
def co_mild():
    s = make_slits((1.2, 1.8, 0.4))
    tr = L.evolve(s, L.DrivingSpec.constant(0.0, 0.05), [], L.EvolveOptions(max_step=1e-3))
    return tr, TR.co_evolve(tr)


# -- capacity oracle ----------------------------------------------------------------

@given(st.floats(-3, 3), st.floats(0.05, 3), st.integers(1, 20))
def test_polyline_vertical_slit(x, y, n):
    pts = x + 1j * y * np.linspace(0, 1, n + 1)
    assert TR.hcap_polyline(pts) == pytest.approx(0.5 * y * y, rel=1e-10)


@given(st.floats(0.2, 5))
def test_polyline_scaling(c):
    pts = np.array([0, 0.3 + 0.5j, 0.1 + 1.0j, -0.2 + 1.3j])
    assert TR.hcap_polyline(c * pts) == pytest.approx(c * c * TR.hcap_polyline(pts), rel=1e-10)


def test_polyline_matches_loewner_capacity():
    # the hull of a linear driver, traced, has capacity 2t
    tr = L.evolve(SlitVector.empty(), L.DrivingSpec.linear(0.0, 1.0, 0.5))
    h = L.trace_hull(tr, n_points=256)
    assert TR.hcap_polyline(h.polyline) == pytest.approx(1.0, rel=1e-3)


# -- co-evolution --------------------------------------------------------------------

def test_initial_jet_is_identity(co_mild):
    _, co = co_mild
    assert co.jets[0] == pytest.approx([0.0, 1.0, 0.0], abs=1e-6)
    assert co.a_img[0] == 0.0


def test_image_capacity_matches_traced_hull(co_mild):
    tr, co = co_mild
    h = L.trace_hull(tr, co.t[-1], n_points=128)
    assert TR.hcap_polyline(h.polyline) == pytest.approx(co.a_img[-1], rel=1e-3)
    # the image clock runs slower than the source clock (h1 < 1 here)
    assert co.a_img[-1] < tr.a[-1]


def test_image_capacity_law(co_mild):
    _, co = co_mild
    # a~ = int h1^2 adot dt, trapezoid on the node grid
    integrand = 2.0 * co.jets[:, 1] ** 2
    trap = np.concatenate([[0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(co.t))])
    assert np.allclose(co.a_img, trap, rtol=1e-4, atol=1e-9)


def test_drift_formula_deterministic(co_mild):
    tr, co = co_mild
    fd = np.gradient(co.xi_img, co.t)
    errs = []
    for k in range(1, len(co.t) - 1, 4):
        d, diff = TR.semimartingale_drift(co.jet(k), tr.xi[k], tr.slits(k), co.xi_img[k],
                                          SlitVector.empty())
        assert diff == 0.0
        errs.append(abs(fd[k] - d))
    assert max(errs) <= 1e-3


def test_fit_residuals_small(co_mild):
    _, co = co_mild
    assert np.max(co.residuals) <= 1e-4
    assert co.stop_reason is None


def test_keep_all_slits_is_identity(one_slit):
    tr = L.evolve(one_slit, L.DrivingSpec.linear(0.0, 0.5, 0.02))
    co = TR.co_evolve(tr, keep=(0,))
    assert np.array_equal(co.xi_img, tr.xi)
    assert np.array_equal(co.a_img, tr.a)
    assert np.all(co.jets[:, 1] == 1.0)


def test_capacity_stop(one_slit):
    tr = L.evolve(one_slit, L.DrivingSpec.constant(0.0, 0.05), [], L.EvolveOptions(max_step=1e-3))
    co = TR.co_evolve(tr, opts=TR.CoEvolveOptions(a_stop=0.02))
    assert co.stop_reason == "capacity horizon"
    assert 0.02 <= co.a_img[-1] < 0.025


def test_stop_near_removed_slit():
    # a driver running under the slit brings the hull toward it
    s = make_slits((-0.3, 0.3, 0.25))
    tr = L.evolve(s, L.DrivingSpec.constant(0.0, 0.02), [], L.EvolveOptions(max_step=2e-4))
    co = TR.co_evolve(tr, opts=TR.CoEvolveOptions(margin=0.5))
    assert co.stop_reason is not None
    assert co.T_V < tr.t_end


# -- reparametrization and drift -----------------------------------------------------

def test_reparametrize_grid(co_mild):
    _, co = co_mild
    rp = TR.reparametrize(co)
    assert np.allclose(rp.a, co.a_img)
    grid = np.linspace(0, rp.horizon, 11)
    rg = TR.reparametrize(co, grid)
    assert np.allclose(rg.tc, grid) and rg.t_source[-1] == pytest.approx(co.t[-1])
    with pytest.raises(ValidationError):
        TR.reparametrize(co, [0.0, 2 * rp.horizon])


def test_reparametrize_rejects_nonmonotone(co_mild):
    _, co = co_mild
    from dataclasses import replace
    bad = replace(co, a_img=np.zeros_like(co.a_img))
    with pytest.raises(NumericalError):
        TR.reparametrize(bad)


def test_drift_identity_inclusion(one_slit):
    # h = id with the same slits: the drift is the source drift b
    jet = TR.ConformalJet(0.0, 1.0, 0.0)
    d, diff = TR.semimartingale_drift(jet, 0.0, one_slit, 0.0, one_slit, alpha=2.0, b=0.7)
    assert d == pytest.approx(0.7, abs=1e-12)
    assert diff == 2.0


def test_drift_vanishes_for_local_pair(one_slit):
    # alpha^2 = 6 and b = -b_BMD give zero drift when the target is the half-plane
    bb = b_bmd(solve_kernel(one_slit, 0.1, adaptive=True))
    jet = TR.ConformalJet(0.2, 0.9, -0.3)
    d, diff = TR.semimartingale_drift(jet, 0.1, one_slit, 0.2, SlitVector.empty(),
                                      alpha=math.sqrt(6), b=-bb)
    assert abs(d) <= 1e-12
    assert diff == pytest.approx(0.9 * math.sqrt(6))


def test_drift_second_order_term():
    jet = TR.ConformalJet(0.0, 1.0, 0.4)
    d, _ = TR.semimartingale_drift(jet, 0.0, SlitVector.empty(), 0.0, SlitVector.empty(), alpha=0.0)
    assert d == pytest.approx(0.5 * 0.4 * -6.0)
