import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma

from tfmbe.kernels import (
    KernelSet,
    consistency_bound,
    error_envelope,
    mittag_leffler,
    rl_weight,
    step_bounds,
)
from tfmbe.timemesh import build_graded, build_random, build_uniform


def identity_residuals(kset, N):
    """Worst orthogonality / complementarity residuals over all k <= n <= N."""
    a = [None] + [kset.l1_row(n).copy() for n in range(1, N + 1)]
    worst_o, worst_c = 0.0, 0.0
    for n in range(1, N + 1):
        th = kset.doc_row(n)
        pr = kset.dcc_update(n)
        for k in range(1, n + 1):
            so = sum(th[n - j] * a[j][j - k] for j in range(k, n + 1))
            sc = sum(pr[n - j] * a[j][j - k] for j in range(k, n + 1))
            worst_o = max(worst_o, abs(so - (1.0 if k == n else 0.0)))
            worst_c = max(worst_c, abs(sc - 1.0))
    return worst_o, worst_c


def test_l1_first_row_closed_form():
    kset = KernelSet(0.5, build_uniform(1, 1.0))
    assert kset.l1_row(1)[0] == pytest.approx(2.0 / math.sqrt(math.pi), rel=1e-14)


def test_l1_second_row_against_quadrature_oracle():
    kset = KernelSet(0.5, build_uniform(2, 2.0))
    # oracle: (1/tau_1) * integral over (t_0, t_1) of w_{0.5}(t_2 - s) ds
    oracle, err = quad(lambda s: (2.0 - s) ** (-0.5) / gamma(0.5), 0.0, 1.0)
    row = kset.l1_row(2)
    assert row[1] == pytest.approx(oracle, rel=1e-10)
    assert row[1] == pytest.approx((math.sqrt(2) - 1) / gamma(1.5), rel=1e-13)


def test_l1_alpha_to_one_limit():
    mesh = build_random(12, 1.0, seed=4)
    kset = KernelSet(1.0 - 1e-6, mesh)
    for n in (1, 5, 12):
        row = kset.l1_row(n)
        assert row[0] == pytest.approx(1.0 / mesh.steps[n - 1], rel=1e-4)
        if n > 1:
            assert np.all(np.abs(row[1:]) < 1e-4 * row[0])


def test_l1_rows_positive_decreasing():
    for mesh in (build_uniform(40, 1.0), build_graded(40, 2.5, 1.0),
                 build_random(40, 1.0, seed=8)):
        kset = KernelSet(0.6, mesh, force_general=True)
        for n in range(1, 41):
            row = kset.l1_row(n)
            assert np.all(row > 0)
            assert np.all(np.diff(row) < 0) or n == 1


def test_doc_first_rows():
    kset = KernelSet(0.5, build_uniform(2, 2.0))
    a1 = kset.l1_row(1)
    a2 = kset.l1_row(2)
    assert kset.doc_row(1)[0] == pytest.approx(1.0 / a1[0], rel=1e-14)
    # oracle: solve the 2x2 lower-triangular orthogonality system
    A = np.array([[a1[0], 0.0], [a2[1], a2[0]]])
    theta = np.linalg.solve(A.T, np.array([0.0, 1.0]))
    got = kset.doc_row(2)
    assert got[0] == pytest.approx(theta[1], rel=1e-13)
    assert got[1] == pytest.approx(theta[0], rel=1e-13)


def test_identities_random_mesh_to_level_50():
    kset = KernelSet(0.7, build_random(50, 1.0, seed=21))
    worst_o, worst_c = identity_residuals(kset, 50)
    assert worst_o <= 1e-10
    assert worst_c <= 1e-10


def test_uniform_fast_path_matches_general():
    mesh = build_uniform(30, 1.0)
    fast = KernelSet(0.4, mesh)
    slow = KernelSet(0.4, mesh, force_general=True)
    for n in (1, 7, 30):
        assert np.allclose(fast.l1_row(n), slow.l1_row(n), rtol=1e-9)
        assert np.allclose(fast.doc_row(n), slow.doc_row(n), rtol=1e-9, atol=1e-12)
        assert np.allclose(fast.dcc_update(n), slow.dcc_update(n), rtol=1e-9)


def test_dcc_incremental_matches_definition_sum():
    kset = KernelSet(0.55, build_random(30, 1.0, seed=9))
    thetas = [None] + [kset.doc_row(j).copy() for j in range(1, 31)]
    for n in (1, 2, 17, 30):
        pr = kset.dcc_update(n)
        for k in range(1, n + 1):
            direct = sum(thetas[j][j - k] for j in range(k, n + 1))
            assert pr[n - k] == pytest.approx(direct, abs=1e-12, rel=1e-12)


def test_dcc_positive_and_integral_cap():
    rng = np.random.default_rng(77)
    for alpha in (0.4, 0.7, 0.9):
        for trial in range(100):
            mesh = build_random(15, 1.0, seed=int(rng.integers(1 << 30)))
            kset = KernelSet(alpha, mesh)
            for n in range(1, 16):
                pr = kset.dcc_update(n)
                assert np.all(pr >= 0)
                cap = rl_weight(1.0 + alpha, mesh.points[n])
                assert pr.sum() <= cap * (1.0 + 1e-10)


def test_caputo_constant_is_zero():
    kset = KernelSet(0.5, build_uniform(10, 1.0))
    diffs = np.zeros(10)
    for n in (1, 5, 10):
        assert kset.caputo_apply(diffs[:n], n) == 0.0


def test_caputo_linearity():
    kset = KernelSet(0.3, build_random(20, 1.0, seed=13))
    rng = np.random.default_rng(5)
    v = rng.standard_normal(20)
    w = rng.standard_normal(20)
    a, b = 1.3, -0.4
    got = kset.caputo_apply(a * v + b * w, 20)
    want = a * kset.caputo_apply(v, 20) + b * kset.caputo_apply(w, 20)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_caputo_of_fractional_monomial_tends_to_one():
    # exact Caputo derivative of w_{1+a} is identically 1
    alpha = 0.5
    errs = []
    for N in (100, 200):
        mesh = build_graded(N, 3.0, 1.0)
        kset = KernelSet(alpha, mesh)
        v = rl_weight(1.0 + alpha, mesh.points)
        errs.append(abs(kset.caputo_apply(np.diff(v), N) - 1.0))
    assert errs[1] < errs[0]
    assert errs[1] < 5e-3


def test_caputo_alpha_limit_is_backward_difference():
    mesh = build_uniform(12, 1.0)
    kset = KernelSet(1.0 - 1e-6, mesh)
    v = np.sin(1.7 * mesh.points) + 0.3 * mesh.points**2
    diffs = np.diff(v)
    for n in (1, 6, 12):
        bd = diffs[n - 1] / mesh.steps[n - 1]
        assert kset.caputo_apply(diffs[:n], n) == pytest.approx(bd, rel=1e-4)


def test_gradient_structure_inequality():
    # 2 v_n sum a v_j >= a0 v_n^2 + sum p^(n) S_k^2 - sum p^(n-1) S_k^2
    rng = np.random.default_rng(2718)
    for trial in range(200):
        n = int(rng.integers(2, 31))
        mesh = build_random(n, 1.0, seed=int(rng.integers(1 << 30)))
        alpha = float(rng.uniform(0.05, 0.95))
        kset = KernelSet(alpha, mesh)
        v = rng.standard_normal(n)
        S = np.array([np.dot(kset.l1_row(k)[::-1], v[:k]) for k in range(1, n + 1)])
        lhs = 2.0 * v[-1] * S[-1]
        pn = kset.dcc_update(n)
        rhs = kset.l1_row(n)[0] * v[-1] ** 2 + np.dot(pn[::-1], S**2)
        if n > 1:
            pm = kset.dcc_update(n - 1)
            rhs -= np.dot(pm[::-1], S[:-1] ** 2)
        assert lhs - rhs >= -1e-10


def test_mittag_leffler_values():
    assert mittag_leffler(0.37, 0.0) == 1.0
    assert mittag_leffler(1.0, 1.0) == pytest.approx(math.e, rel=1e-13)
    # series oracle at two truncation depths
    def series(alpha, z, K):
        return sum(z**k / gamma(1.0 + k * alpha) for k in range(K))
    s200 = series(0.5, 1.0, 200)
    s500 = series(0.5, 1.0, 500)
    assert s200 == pytest.approx(s500, rel=1e-15)
    assert mittag_leffler(0.5, 1.0) == pytest.approx(s500, rel=1e-13)


def test_mittag_leffler_domain():
    with pytest.raises(ValueError):
        mittag_leffler(0.5, -0.1)
    with pytest.raises(ValueError):
        mittag_leffler(0.5, 51.0)
    with pytest.raises(ValueError):
        mittag_leffler(1.2, 1.0)


def test_step_bounds_values():
    b = step_bounds(0.5, 0.1, 1.0)
    assert b.tau_conv == pytest.approx((0.2 / gamma(1.5)) ** 2, rel=1e-13)
    for alpha in (0.25, 0.5, 0.8):
        b = step_bounds(alpha, 0.3, 2.0)
        assert b.tau_solv / b.tau_conv == pytest.approx(2.0 ** (1.0 / alpha), rel=1e-12)
    near = step_bounds(1.0 - 1e-6, 0.1, 1.0)
    assert near.tau_conv == pytest.approx(0.2, rel=1e-4)
    assert near.tau_solv == pytest.approx(0.4, rel=1e-4)
    with pytest.raises(ValueError):
        step_bounds(0.5, -1.0, 1.0)


def test_consistency_bound_zero_for_linear():
    kset = KernelSet(0.6, build_uniform(8, 1.0))
    assert consistency_bound(kset, lambda t: 0.0, 8) == 0.0


def _bound_rate(alpha, gmm, Ns=(40, 80, 160, 320)):
    c = 1.0 / abs(gamma(alpha - 1.0))
    vals, taus = [], []
    for N in Ns:
        mesh = build_graded(N, gmm, 1.0)
        kset = KernelSet(alpha, mesh, force_general=True)
        vals.append(consistency_bound(kset, lambda t: c * t ** (alpha - 2.0), N))
        taus.append(mesh.tau_max)
    return np.polyfit(np.log(taus), np.log(vals), 1)[0]


def test_consistency_bound_rate_quasi_uniform():
    rate = _bound_rate(0.8, 1.0, Ns=(40, 80, 160))
    assert rate == pytest.approx(0.8, abs=0.15)


def test_consistency_bound_rate_optimal_grading():
    alpha = 0.5
    rate = _bound_rate(alpha, (2.0 - alpha) / alpha, Ns=(40, 80, 160))
    assert rate == pytest.approx(2.0 - alpha, abs=0.2)


def test_error_envelope_composition():
    val = error_envelope(0.8, 1.0, 0.25, 1.0, 1.0, consistency=0.01)
    assert val == pytest.approx(2.0 * mittag_leffler(0.8, 1.0 / 0.5) * 0.01, rel=1e-12)
    assert error_envelope(0.8, 1.0, 0.25, 0.5, 1.0, consistency=0.01) > val
    with pytest.raises(ValueError):
        error_envelope(0.8, 1.0, 0.25, 0.0, 1.0, consistency=0.01)


def test_kernelset_level_bounds():
    kset = KernelSet(0.5, build_uniform(4, 1.0))
    with pytest.raises(ValueError):
        kset.l1_row(0)
    with pytest.raises(ValueError):
        kset.l1_row(5)


def test_add_time_monotone():
    kset = KernelSet(0.5)
    kset.add_time(0.5)
    with pytest.raises(ValueError):
        kset.add_time(0.25)
    kset.add_time(1.0)
    assert kset.n_max == 2
    assert kset.tau(2) == 0.5
