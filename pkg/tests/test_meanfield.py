import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from lowsnr import meanfield as MF, prior as P


def bank(name, p, d=0.0):
    return P.SiteBank.from_prior(P.prior_from_config(name), np.full(p, d))


def rademacher_oracle(a, c1, c2):
    # u1 = tanh(a tanh(a u1 + c2) + c1), solved by bracketing on [-1, 1]
    f = lambda u1: u1 - math.tanh(a * math.tanh(a * u1 + c2) + c1)
    u1 = brentq(f, -1.0, 1.0, xtol=1e-15)
    return u1, math.tanh(a * u1 + c2)


A2 = np.array([[0.0, 0.3], [0.3, 0.0]])


def test_zero_coupling_one_step():
    c = np.array([0.3, -1.2, 2.0])
    b = bank("uniform", 3, 1.0)
    sol = MF.solve_fixed_point(b, np.zeros((3, 3)), c)
    np.testing.assert_allclose(sol.u, b.mean(c), atol=1e-15)
    assert sol.iterations == 1


def test_symmetric_zero_field():
    sol = MF.solve_fixed_point(bank("rademacher", 2), A2, np.zeros(2))
    np.testing.assert_array_equal(sol.u, [0.0, 0.0])


def test_rademacher_pair_against_bisection():
    c = np.array([0.5, -0.2])
    sol = MF.solve_fixed_point(bank("rademacher", 2), A2, c)
    np.testing.assert_allclose(sol.u, rademacher_oracle(0.3, 0.5, -0.2), atol=1e-9)
    assert MF.mf_point_estimate(sol, [1.0, 0.0]) == pytest.approx(sol.u[0])
    assert sol.residual <= 1e-10
    np.testing.assert_allclose(sol.s, A2 @ sol.u)
    np.testing.assert_allclose(sol.theta, A2 @ sol.u + c)


def test_convergence_error_carries_iterate():
    with pytest.raises(MF.ConvergenceError) as info:
        MF.solve_fixed_point(bank("rademacher", 2), A2, np.array([0.5, -0.2]), max_iter=3)
    assert info.value.u.shape == (2,)
    assert info.value.iterations == 3


def test_damping_same_answer():
    c = np.array([0.5, -0.2])
    a = MF.solve_fixed_point(bank("rademacher", 2), A2, c)
    b = MF.solve_fixed_point(bank("rademacher", 2), A2, c, damping=0.5)
    np.testing.assert_allclose(a.u, b.u, atol=1e-9)
    assert b.iterations > a.iterations


def test_strong_coupling_warns():
    A = np.array([[0.0, 1.2], [1.2, 0.0]])
    with pytest.warns(RuntimeWarning):
        MF.solve_fixed_point(bank("uniform", 2), A, np.array([0.1, 0.2]))


def random_problem(seed, p=30, rho=0.9):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((p, p))
    A = (G + G.T) / 2
    np.fill_diagonal(A, 0.0)
    A *= rho / np.linalg.norm(A, 2)
    return A, rng.normal(0, 1.5, p), rng


def test_uniqueness_from_random_starts():
    A, c, rng = random_problem(0)
    b = bank("uniform", 30, 1.0)
    sols = [MF.solve_fixed_point(b, A, c, init=rng.uniform(-1, 1, 30)).u for _ in range(10)]
    for s in sols[1:]:
        assert np.max(np.abs(s - sols[0])) < 1e-8


def test_sign_equivariance():
    A, c, _ = random_problem(1)
    b = bank("three_point", 30, 0.5)
    s1 = MF.solve_fixed_point(b, A, c)
    s2 = MF.solve_fixed_point(b, A, -c)
    np.testing.assert_array_equal(s1.u, -s2.u)
    assert s1.iterations == s2.iterations


def test_contraction_rate():
    A, c, _ = random_problem(2, rho=0.6)
    b = bank("rademacher", 30)
    u = b.mean(c)
    steps = []
    for _ in range(40):
        new = b.mean(A @ u + c)
        steps.append(np.max(np.abs(new - u)))
        u = new
    ratios = [s1 / s0 for s0, s1 in zip(steps[10:], steps[11:]) if s0 > 1e-13]
    assert max(ratios) <= 0.6 + 0.05


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), name=st.sampled_from(["uniform", "rademacher", "three_point"]))
def test_residual_recomputed(seed, name):
    A, c, _ = random_problem(seed, p=12, rho=0.8)
    b = bank(name, 12, 0.7)
    sol = MF.solve_fixed_point(b, A, c)
    assert MF.fixed_point_residual(b, A, c, sol.u) <= 2e-10
    assert np.all(np.abs(sol.u) < 1)


def test_upsilon_examples():
    q = np.array([0.6, 0.8])
    assert MF.upsilon_p(q, bank("rademacher", 2), np.zeros(2)) == pytest.approx(1.0, abs=1e-15)
    assert MF.upsilon_p(q, bank("uniform", 2), np.zeros(2)) == pytest.approx(1 / 3, abs=1e-13)
    sites = P.SiteBank.from_sites([P.make_site(P.uniform(), 1.0), P.make_site(P.rademacher(), 0.0)])
    v = MF.upsilon_p(q, sites, np.array([0.4, -2.0]))
    assert 0 < v <= 1
    with pytest.raises(ValueError):
        MF.upsilon_p(np.ones(2), sites, np.zeros(2))


def test_quantiles():
    assert MF.normal_two_sided_quantile(0.05) == pytest.approx(1.959963984540054, abs=1e-10)
    assert MF.normal_two_sided_quantile(0.9) == pytest.approx(0.125661346855074, abs=1e-10)
    widths = [MF.normal_two_sided_quantile(a) for a in (0.01, 0.05, 0.2, 0.5, 0.9)]
    assert np.all(np.diff(widths) < 0)


def test_interval_widths():
    e = MF.exact_interval(None, None, 0.25, 0.0, 0.05, center=0.0)
    assert e.half_width == pytest.approx(0.979982, abs=1e-6)
    e2 = MF.exact_interval(None, None, 0.5, 0.5, 0.05, center=0.0)
    assert e2.half_width == pytest.approx(1.959963984540054 * math.sqrt(0.5 / 0.75), abs=1e-10)
    assert e2.half_width == pytest.approx(1.600304, abs=1e-6)
    n = MF.nmf_interval(None, None, 0.25, 0.05, center=0.0)
    assert n.half_width == pytest.approx(0.979982, abs=1e-6)
    assert (e.lo, e.hi) == (n.lo, n.hi)
    assert MF.exact_interval(None, None, 0.3, 0.4, 0.05, center=0).half_width > \
        MF.nmf_interval(None, None, 0.3, 0.05, center=0).half_width
    assert MF.exact_interval(None, None, 0.3, -0.4, 0.05, center=0).half_width < \
        MF.nmf_interval(None, None, 0.3, 0.05, center=0).half_width
    with pytest.raises(ValueError):
        MF.exact_interval(None, None, 0.5, 2.0, 0.05, center=0.0)


def test_interval_center_from_solution():
    sol = MF.solve_fixed_point(bank("uniform", 2), np.zeros((2, 2)), np.array([0.0, 0.0]))
    ci = MF.exact_interval(sol, np.array([0.6, 0.8]), 0.3, 0.0, 0.05)
    assert ci.center == pytest.approx(0.0, abs=1e-15) and ci.contains(0.0)
    assert ci.as_row()[3] == "exact"


def test_solution_csv(tmp_path):
    sol = MF.solve_fixed_point(bank("rademacher", 2), A2, np.array([0.5, -0.2]))
    sol.to_csv(tmp_path / "u.csv")
    arr = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(arr[:, 1], sol.u)
