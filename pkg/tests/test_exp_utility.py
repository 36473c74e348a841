import math

import numpy as np
import pytest

from pogs import solver
from pogs.errors import ExponentOverflow, ImpossibleObservation
from pogs.exp_utility import phi_e_update, q_hat_x, solve_finite_exp
from pogs.model import Utility, make_spec, random_spec


def test_q_hat_constant_cost(micro):
    spec = micro.replace(cost=np.full(micro.cost.shape, 1.3))
    mu = np.array([0.4, 0.6])
    q = q_hat_x(spec, 0, mu, 1, 0, 0.7)
    np.testing.assert_allclose(q, math.exp(0.7 * 1.3) * (mu @ spec.qx[0, :, 1, 0]), rtol=1e-14)


def test_q_hat_double_sum(micro):
    mu = np.array([0.25, 0.75])
    q = q_hat_x(micro, 1, mu, 0, 1, 0.9)
    for xn in range(2):
        direct = sum(mu[y] * math.exp(0.9 * micro.cost[1, y, 0, 1]) * micro.kernel[1, y, 0, 1, xn, y2]
                     for y in range(2) for y2 in range(2))
        assert q[xn] == pytest.approx(direct, rel=1e-12)
    assert q.sum() == pytest.approx(sum(mu * np.exp(0.9 * micro.cost[1, :, 0, 1])), rel=1e-13)


def test_phi_e_degenerate_tilt(micro):
    cost = np.broadcast_to(micro.cost[:, :1], micro.cost.shape).copy()
    spec = micro.replace(cost=cost)
    mu = np.array([0.3, 0.7])
    post = phi_e_update(spec, 0, 1, 1, 1, mu, 2.0)
    plain = mu @ spec.kernel[0, :, 1, 1, 1, :]
    np.testing.assert_allclose(post, plain / plain.sum(), rtol=1e-14)


def test_phi_e_matches_joint_enumeration(micro):
    mu = np.array([0.6, 0.4])
    post = phi_e_update(micro, 1, 0, 0, 0, mu, 0.5)
    joint = np.zeros(2)
    for y in range(2):
        for y2 in range(2):
            joint[y2] += mu[y] * math.exp(0.5 * micro.cost[1, y, 0, 0]) * micro.kernel[1, y, 0, 0, 0, y2]
    np.testing.assert_allclose(post, joint / joint.sum(), rtol=1e-14)
    one = random_spec(2, 2, 1, 2, 2)
    assert phi_e_update(one, 0, 0, 0, 1, np.ones(1), 1.0).tolist() == [1.0]


def test_errors(micro):
    with pytest.raises(ValueError, match="θ>0"):
        solve_finite_exp(micro, 0, 2)
    with pytest.raises(ValueError, match="θ>0"):
        solve_finite_exp(micro.replace(utility=Utility.exponential(-1.0)), 0, 2)
    with pytest.raises(ExponentOverflow, match="exponent overflow"):
        q_hat_x(micro, 0, np.array([0.5, 0.5]), 0, 0, 1000.0)
    kern = micro.kernel.copy()
    kern[0, :, 0, 0] = 0.0
    kern[0, :, 0, 0, 0, 0] = 1.0
    with pytest.raises(ImpossibleObservation):
        phi_e_update(micro.replace(kernel=kern), 0, 0, 0, 1, np.array([0.5, 0.5]), 1.0)


def test_trivial_values():
    spec = random_spec(0, 2, 2, 2, 2, 0.5, Utility.exponential(2.0))
    assert solve_finite_exp(spec, 0, 0) == 0.5
    rng = np.random.default_rng(1)
    cost = rng.uniform(1, 2, size=(2, 2, 1, 1))
    kern = rng.dirichlet(np.ones(4), size=(2, 2, 1, 1)).reshape(2, 2, 1, 1, 2, 2)
    spec = make_spec(cost, kern, [0.3, 0.7], 0.5, Utility.exponential(1.0))
    expect = 0.3 * math.exp(cost[0, 0, 0, 0]) + 0.7 * math.exp(cost[0, 1, 0, 0])
    assert solve_finite_exp(spec, 0, 1) == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("theta", [0.5, 1.0])
@pytest.mark.parametrize("seed", range(3))
def test_agrees_with_general_solver(theta, seed):
    spec = random_spec(seed, 2, 2, 2, 2, 0.8, Utility.exponential(theta))
    for N in range(4):
        general = solver.solve_finite(spec, 0, N).value
        assert abs(solve_finite_exp(spec, 0, N) - general) <= 1e-8 * abs(general)
