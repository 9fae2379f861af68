import math
import random

import numpy as np
import pytest

from psem.errors import ConvergenceError, SingularSystemError
from psem.estimating import (EstimatingSystem, delta_method, sandwich_cov,
                             solve_system)


def mean_system(init=0.0):
    return EstimatingSystem(dim=1, evaluate=lambda y, t: [y - t[0]], init=[init])


def test_mean_equation():
    fit = solve_system(mean_system(), [0, 1, 1, 1])
    assert fit.theta[0] == pytest.approx(0.75, abs=1e-12)
    assert fit.residual_norm <= 1e-10


def test_weighted_mean():
    weights = {0: 2.0, 1: 1.0, 2: 1.0, 3: 1.0}
    system = EstimatingSystem(dim=1, evaluate=lambda i, t: [[0, 1, 1, 1][i] - t[0]],
                              init=[0.0], weight=lambda i: weights[i])
    fit = solve_system(system, [0, 1, 2, 3])
    assert fit.theta[0] == pytest.approx(3 / 5, abs=1e-12)


def test_stacked_mean_and_second_moment():
    system = EstimatingSystem(
        dim=2, evaluate=lambda y, t: [y - t[0], y * y - t[1]], init=[0.0, 1.0])
    fit = solve_system(system, [1, 2, 3])
    assert fit.theta[0] == pytest.approx(2.0, abs=1e-10)
    assert fit.theta[1] == pytest.approx(14 / 3, abs=1e-10)


def test_sandwich_bernoulli_mean():
    cov = sandwich_cov(mean_system(), [0, 1, 1, 1], np.array([0.75]))
    assert cov[0, 0] == pytest.approx(0.75 * 0.25 / 4, abs=1e-12)


def test_sandwich_small_sample_population_convention():
    cov = sandwich_cov(mean_system(), [1, 2, 3], np.array([2.0]))
    assert cov[0, 0] == pytest.approx((2 / 3) / 3, abs=1e-12)


def test_sandwich_matches_brute_force_on_stacked_system():
    rng = random.Random(5)
    data = [rng.gauss(0.4, 1.3) for _ in range(20)]
    system = EstimatingSystem(
        dim=2, evaluate=lambda y, t: [y - t[0], (y - t[0]) ** 2 - t[1]],
        init=[0.0, 1.0])
    fit = solve_system(system, data)
    # independent brute force: explicit per-record outer products and a
    # Jacobian from a different finite-difference step
    n = len(data)
    p = 2
    meat = np.zeros((p, p))
    for y in data:
        u = np.array(system.evaluate(y, fit.theta))
        meat += np.outer(u, u) / n

    def mean_eq(t):
        return sum(np.array(system.evaluate(y, t)) for y in data) / n

    h = 1e-5
    bread = np.zeros((p, p))
    for j in range(p):
        tp, tm = fit.theta.copy(), fit.theta.copy()
        tp[j] += h
        tm[j] -= h
        bread[:, j] = (mean_eq(tp) - mean_eq(tm)) / (2 * h)
    binv = np.linalg.inv(bread)
    expected = binv @ meat @ binv.T / n
    assert np.allclose(fit.cov, expected, atol=1e-8)


def test_fd_gradient_matches_analytic_polynomial():
    # F(t) = (t0^2 + 2 t1 - 3, t0 t1 - 1): check the internal Jacobian
    from psem.estimating import _fd_jacobian
    theta = np.array([1.3, -0.7])
    jac = _fd_jacobian(lambda t: np.array([t[0] ** 2 + 2 * t[1] - 3,
                                           t[0] * t[1] - 1]), theta)
    exact = np.array([[2 * theta[0], 2.0], [theta[1], theta[0]]])
    assert np.max(np.abs(jac - exact)) / np.max(np.abs(exact)) < 1e-6


def test_delta_identity():
    value, var = delta_method(lambda t: t[0], np.array([0.3]), np.array([[0.04]]))
    assert value == pytest.approx(0.3)
    assert var == pytest.approx(0.04, rel=1e-9)


def test_delta_ratio():
    value, var = delta_method(lambda t: t[0] / t[1], np.array([1.0, 2.0]),
                              np.diag([0.04, 0.09]))
    assert value == pytest.approx(0.5)
    assert var == pytest.approx(0.01 + 0.005625, rel=1e-7)


def test_delta_difference_with_covariance():
    cov = np.array([[0.01, 0.002], [0.002, 0.02]])
    value, var = delta_method(lambda t: t[0] - t[1], np.array([0.3, 0.5]), cov)
    assert value == pytest.approx(-0.2)
    assert var == pytest.approx(0.026, rel=1e-9)


def test_delta_invariant_to_additive_constant():
    theta = np.array([0.4, 1.1])
    cov = np.array([[0.02, -0.003], [-0.003, 0.05]])
    _, v1 = delta_method(lambda t: t[0] * t[1], theta, cov)
    _, v2 = delta_method(lambda t: t[0] * t[1] + 17.0, theta, cov)
    assert v1 == pytest.approx(v2, rel=1e-6)    # FD gradients, not exact


def test_solve_permutation_invariance():
    rng = random.Random(3)
    data = [rng.random() for _ in range(500)]
    shuffled = data[:]
    rng.shuffle(shuffled)
    t1 = solve_system(mean_system(), data).theta[0]
    t2 = solve_system(mean_system(), shuffled).theta[0]
    assert abs(t1 - t2) <= 1e-10


def test_nonconvergence_carries_state():
    system = EstimatingSystem(dim=1, evaluate=lambda y, t: [math.tanh(t[0]) + 2.0],
                              init=[0.0])
    with pytest.raises(ConvergenceError) as err:
        solve_system(system, [1.0], max_iter=5)
    assert err.value.theta is not None
    assert err.value.residual is not None and err.value.residual > 0


def test_singular_jacobian_detected():
    system = EstimatingSystem(
        dim=2, evaluate=lambda y, t: [t[0] + t[1] - y, t[0] + t[1] - y],
        init=[0.0, 0.0])
    with pytest.raises(SingularSystemError):
        solve_system(system, [1.0, 2.0])


def test_bad_inputs():
    with pytest.raises(ValueError):
        solve_system(mean_system(), [])
    with pytest.raises(ValueError):
        solve_system(mean_system(), [1.0], tol=0.0)
