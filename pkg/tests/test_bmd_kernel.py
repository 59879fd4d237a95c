import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slitflow import (AmbiguousSideError, PoleError, SlitVector, ValidationError, geometry,
                      make_slits)
from slitflow import bmd_kernel as bk
from slitflow.grid_oracle import grid_kernel


def _interior_points(s, n, rng):
    pts = []
    while len(pts) < n:
        z = complex(rng.uniform(-4, 4), rng.uniform(0.01, 3))
        if geometry.dist_to_slits(s, z) > 1e-3:
            pts.append(z)
    return np.array(pts)


def test_half_plane_kernel_is_closed_form():
    sol = bk.solve_kernel(SlitVector.empty(), 0.7)
    z = np.array([1j, 2 + 0.5j, -3 + 4j])
    assert np.allclose(bk.eval_psi(sol, z), -1.0 / (np.pi * (z - 0.7)), rtol=0, atol=1e-15)
    assert bk.b_bmd(sol) == 0.0


def test_constancy_residual(three_slits):
    sol = bk.solve_kernel(three_slits, 0.3, adaptive=True)
    assert sol.converged
    assert sol.residual <= 1e-8


def test_slit_values_equal_level_constants(three_slits):
    sol = bk.solve_kernel(three_slits, 0.3)
    for j in range(three_slits.n_slits):
        xs = np.linspace(three_slits.x[j], three_slits.xr[j], 9)[1:-1]
        z = xs + 1j * three_slits.y[j]
        for side in (1, -1):
            assert np.allclose(bk.eval_psi(sol, z, side=side).imag, sol.c[j], atol=1e-8)


def test_imaginary_part_vanishes_on_real_axis(three_slits):
    sol = bk.solve_kernel(three_slits, 0.3)
    x = np.linspace(-6, 6, 101)
    x = x[x != 0.3]
    assert np.all(bk.eval_psi(sol, x + 0j).imag == 0.0)


def test_decay_at_infinity(one_slit):
    sol = bk.solve_kernel(one_slit, 0.0)
    assert abs(bk.eval_psi(sol, 1000j)) <= 1e-3


def test_schwarz_symmetry(three_slits):
    sol = bk.solve_kernel(three_slits, -0.2)
    z = _interior_points(three_slits, 50, np.random.default_rng(1))
    d = bk.eval_h(sol, z.conj()) - np.conj(bk.eval_h(sol, z))
    assert np.max(np.abs(d)) <= 1e-12


def test_positivity(three_slits):
    sol = bk.solve_kernel(three_slits, 0.3)
    z = _interior_points(three_slits, 100, np.random.default_rng(2))
    assert np.all(bk.eval_psi(sol, z).imag > 0)


def test_spectral_convergence(three_slits):
    res = [bk.solve_kernel(three_slits, 0.3, resolution=m).residual for m in (4, 8, 16)]
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-3 * res[0]


def test_pole_and_side_errors(one_slit):
    sol = bk.solve_kernel(one_slit, 0.0)
    with pytest.raises(PoleError):
        bk.eval_psi(sol, 0j)
    with pytest.raises(AmbiguousSideError):
        bk.eval_psi(sol, 1.5 + 0.4j)
    # endpoints need no side
    assert np.isfinite(bk.eval_psi(sol, 1.2 + 0.4j))


def test_invalid_geometry_rejected():
    with pytest.raises(ValidationError, match="bmd_kernel"):
        bk.solve_kernel(SlitVector([1.0, 1.0], [0.0, 0.5], [1.0, 2.0]), 0.0)


def test_symmetric_slit_has_zero_domain_constant(centered_slit):
    assert abs(bk.b_bmd(bk.solve_kernel(centered_slit, 0.0))) < 1e-12


def test_domain_constant_sign_off_center(one_slit):
    # a slit to the right pushes the constant negative
    assert bk.b_bmd(bk.solve_kernel(one_slit, 0.0)) < 0


def test_b_vector_translation_exact(three_slits):
    a = bk.b_vector(three_slits, 0.37)
    b = bk.b_vector(geometry.translate(three_slits, 0.37), 0.0)
    assert np.max(np.abs(a - b)) <= 1e-12


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_b_vector_scaling(three_slits, c):
    a = bk.b_vector(three_slits, 0.2)
    b = bk.b_vector(geometry.scale(three_slits, c), 0.2 * c)
    assert np.allclose(b, a / c, rtol=1e-6, atol=0)


@given(st.floats(0.2, 2.0), st.floats(0.2, 1.5), st.floats(-1.0, 1.0))
def test_b_vector_translation_property(y, L, d):
    s = make_slits((-0.3, -0.3 + L, y))
    assert np.max(np.abs(bk.b_vector(s, d) - bk.b_vector(geometry.translate(s, d), 0.0))) <= 1e-12


def test_heights_decrease_direction(three_slits):
    # dy/dt = -2 pi Im Psi at the left endpoint is negative by positivity
    b = bk.b_vector(three_slits, 0.0)
    assert np.all(b[:3] < 0)


def test_cache_returns_same_object(one_slit):
    bk.enable_cache(8)
    try:
        a = bk.solve_kernel(one_slit, 0.1)
        assert bk.solve_kernel(one_slit, 0.1) is a
    finally:
        bk.disable_cache()


def test_grid_oracle_converges_to_bie(centered_slit):
    sol = bk.solve_kernel(centered_slit, 0.0, adaptive=True)
    probes = np.array([2j, 1 + 2j, -1 + 0.5j])
    ref = bk.eval_psi(sol, probes).imag
    errs = []
    for h in (2.0 ** -4, 2.0 ** -5, 2.0 ** -6):
        g = grid_kernel(centered_slit, 0.0, h=h, half_width=8.0)
        errs.append(np.max(np.abs(g.im_psi(probes) - ref) / np.abs(ref)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


def test_grid_oracle_half_plane():
    g = grid_kernel(SlitVector.empty(), 0.0, h=2.0 ** -5, half_width=8.0)
    z = np.array([1j, 1 + 1j])
    exact = (-1.0 / (np.pi * z)).imag
    # truncation of the box perturbs the free kernel by O(1/W^2)
    assert np.allclose(g.im_psi(z), exact, rtol=0.05)


def test_grid_oracle_rejects_outside_probe(centered_slit):
    g = grid_kernel(centered_slit, 0.0, h=2.0 ** -4, half_width=8.0)
    with pytest.raises(ValidationError):
        g.im_psi(20 + 1j)
