import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slitflow import SlitVector, ValidationError
from slitflow import skle
from slitflow.bmd_kernel import b_bmd, solve_kernel
from slitflow.loewner import map_point


def test_coefficient_pairs():
    c = skle.CoefficientPair.sle(6.0)
    assert c.alpha(0.0, SlitVector.empty()) == pytest.approx(math.sqrt(6))
    assert c.b(0.0, SlitVector.empty()) == 0.0
    with pytest.raises(ValidationError):
        skle.CoefficientPair.sle(-1.0)
    with pytest.raises(ValidationError):
        skle.CoefficientPair.sle(6.0, drift="weird")


def test_bmd_constant_matches_kernel(one_slit):
    ref = b_bmd(solve_kernel(one_slit, 0.3, adaptive=True))
    assert skle.bmd_constant(0.3, one_slit) == pytest.approx(ref, abs=1e-10)
    assert skle.bmd_constant(0.3, SlitVector.empty()) == 0.0


def test_path_seed_is_stable_and_distinct():
    a = [skle.path_seed(7, i) for i in range(50)]
    assert a == [skle.path_seed(7, i) for i in range(50)]
    assert len(set(a)) == 50
    assert skle.path_seed(8, 0) != a[0]


def test_same_seed_same_path(one_slit):
    c = skle.CoefficientPair.sle(6.0, "bmd")
    p = skle.sample_path(one_slit, 0.0, c, dt=1e-3, T=0.02, seed=42)
    q = skle.sample_path(one_slit, 0.0, c, dt=1e-3, T=0.02, seed=42)
    assert np.array_equal(p.xi, q.xi) and np.array_equal(p.s, q.s)
    r = skle.sample_path(one_slit, 0.0, c, dt=1e-3, T=0.02, seed=43)
    assert not np.array_equal(p.xi, r.xi)


def test_coefficients_recorded_per_step(one_slit):
    c = skle.CoefficientPair.sle(6.0, "bmd")
    p = skle.sample_path(one_slit, 0.0, c, dt=1e-3, T=0.01, seed=1)
    assert p.coef.shape == (len(p.t) - 1, 3)
    assert np.allclose(p.coef[:, 0], math.sqrt(6))
    assert np.allclose(p.coef[:, 1], -p.coef[:, 2])
    assert skle.bmd_constant(p.xi[3], p.traj.slits(3)) == pytest.approx(p.coef[3, 2], abs=1e-10)


def test_euler_maruyama_increments(one_slit):
    # xi_{k+1} - xi_k = alpha sqrt(dt) Z_k + b dt exactly
    c = skle.CoefficientPair.sle(6.0, "bmd")
    p = skle.sample_path(one_slit, 0.0, c, dt=1e-3, T=0.01, seed=5)
    pred = p.coef[:, 0] * math.sqrt(1e-3) * p.normals + p.coef[:, 1] * 1e-3
    assert np.allclose(p.increments, pred, rtol=0, atol=1e-14)


def test_zero_kappa_is_deterministic_flow(one_slit):
    # with alpha = b = 0 the path is the constant-driver Loewner chain
    p = skle.sample_path(one_slit, 0.0, skle.CoefficientPair.sle(0.0), dt=1e-3, T=0.01, seed=3)
    assert np.all(p.xi == 0.0)
    assert np.all(np.diff(p.s[:, 0]) < 0)
    g = map_point(p.traj, 2j)
    assert abs(g - 2j) > 0


def test_free_fast_path(one_slit):
    c = skle.CoefficientPair.sle(4.0)
    p = skle.sample_path(SlitVector.empty(), 0.5, c, dt=0.01, T=0.1, seed=11)
    assert len(p.t) == 11 and p.t[-1] == pytest.approx(0.1)
    assert np.allclose(np.diff(p.xi), 2.0 * 0.1 * p.normals)
    assert p.stop_reason is None


def test_invalid_arguments(one_slit):
    c = skle.CoefficientPair.sle(6.0)
    with pytest.raises(ValidationError):
        skle.sample_path(one_slit, 0.0, c, dt=0.0, T=1.0)
    with pytest.raises(ValidationError):
        skle.sample_path(SlitVector([1.0], [1.0], [0.0]), 0.0, c, dt=1e-3, T=0.01)
    with pytest.raises(ValidationError):
        skle.ensemble(skle.EnsembleConfig(one_slit, 0.0, c, 1e-3, 0.01), 0)


def test_ensemble_deterministic_and_order_independent():
    cfg = skle.EnsembleConfig(SlitVector.empty(), 0.0, skle.CoefficientPair.sle(6.0), 0.01, 0.5)
    a = skle.ensemble(cfg, 30, master_seed=9)
    b = skle.ensemble(cfg, 30, master_seed=9, workers=2)
    assert np.array_equal(a.final_xi, b.final_xi)
    assert a.as_dict()["n_paths"] == 30


def test_half_plane_variance():
    cfg = skle.EnsembleConfig(SlitVector.empty(), 0.0, skle.CoefficientPair.sle(6.0), 1e-3, 0.5)
    rep = skle.ensemble(cfg, 500, master_seed=2024)
    assert rep.n_failed == 0
    assert abs(rep.var - 3.0) <= 3 * rep.se_var
    assert abs(rep.mean) <= 3 * rep.se_mean
    # quadratic variation of each path concentrates near kappa T
    assert np.mean(rep.qv) == pytest.approx(3.0, rel=0.02)


def test_failed_paths_are_reported(one_slit):
    def boom(p):
        raise RuntimeError("nope")
    cfg = skle.EnsembleConfig(one_slit, 0.0, skle.CoefficientPair.sle(6.0), 1e-3, 0.002)
    res = skle.run_paths(cfg, 2, 0, boom)
    assert all(r is None and "nope" in err for r, err in res)


@given(st.integers(0, 2 ** 64 - 1))
def test_any_u64_seed_accepted(seed):
    c = skle.CoefficientPair.sle(2.0)
    p = skle.sample_path(SlitVector.empty(), 0.0, c, dt=0.1, T=0.3, seed=seed)
    assert p.seed == seed and len(p.xi) == 4
