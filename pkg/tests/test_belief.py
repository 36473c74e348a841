import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pogs import oracle
from pogs.belief import (AugmentedState, Belief, canonicalize, filter, initial_belief,
                         phi_update, s_marginal, y_marginal)
from pogs.errors import ImpossibleObservation
from pogs.model import History, make_spec, q_x_under_belief, random_spec


def persistent_spec():
    # X = {x0, x1}, Y = {g, h}; hidden state persists; x1 seen w.p. .8 under g, .2 under h
    cost = np.empty((2, 2, 1, 1))
    cost[:, 0] = 1.0
    cost[:, 1] = 2.0
    kern = np.zeros((2, 2, 1, 1, 2, 2))
    for x in range(2):
        kern[x, 0, 0, 0, 1, 0], kern[x, 0, 0, 0, 0, 0] = 0.8, 0.2
        kern[x, 1, 0, 0, 1, 1], kern[x, 1, 0, 0, 0, 1] = 0.2, 0.8
    return make_spec(cost, kern, [0.5, 0.5], 0.5)


def test_initial_belief_support():
    spec = random_spec(0, 2, 3, 2, 2).replace(initial_hidden=np.array([0.3, 0.0, 0.7]))
    mu = initial_belief(spec)
    assert mu.atoms() == [(0, 0.0, 0.3), (2, 0.0, 0.7)]


def test_phi_update_two_hidden_states():
    spec = persistent_spec()
    mu = phi_update(spec, 0, 0, 0, 1, initial_belief(spec), 1.0)
    assert mu.y.tolist() == [0, 1] and mu.s.tolist() == [1.0, 2.0]
    np.testing.assert_allclose(mu.w, [0.8, 0.2], atol=1e-15)


def test_phi_update_single_hidden_state():
    spec = random_spec(1, 3, 1, 2, 2)
    mu = phi_update(spec, 1, 1, 0, 2, initial_belief(spec), 0.25)
    assert mu.atoms() == [(0, 0.25 * spec.cost[1, 0, 1, 0], 1.0)]


def test_uninformative_observation():
    spec = random_spec(2, 2, 3, 2, 2)
    kern = np.broadcast_to(spec.kernel[:, :1], spec.kernel.shape).copy()
    cost = np.broadcast_to(spec.cost[:, :1], spec.cost.shape).copy()
    spec = spec.replace(kernel=kern, cost=cost)
    mu = phi_update(spec, 0, 1, 1, 1, initial_belief(spec), 1.0)
    row = kern[0, 0, 1, 1, 1]
    np.testing.assert_allclose(mu.y_marginal(3), row / row.sum(), rtol=1e-14)
    assert mu.s_marginal() == [(cost[0, 0, 1, 1], pytest.approx(1.0, abs=1e-15))]


def test_impossible_observation_and_step_index():
    spec = persistent_spec()
    kern = spec.kernel.copy()
    kern[1, :, 0, 0] = 0.0
    kern[1, :, 0, 0, 1, :] = np.eye(2)
    spec = spec.replace(kernel=kern)
    with pytest.raises(ImpossibleObservation, match="impossible observation") as exc:
        filter(spec, History((0, 1, 0), ((0, 0), (0, 0))))
    assert exc.value.step == 1


def test_denominator_identity(micro):
    mu = filter(micro, History((0, 1), ((1, 0),)))[-1]
    for a in range(2):
        for b in range(2):
            qx = q_x_under_belief(micro, 1, mu.y_marginal(2), a, b)
            direct = mu.w @ micro.qx[1, mu.y, a, b]
            np.testing.assert_allclose(direct, qx, rtol=1e-15, atol=1e-17)


def test_marginals():
    mu = Belief(np.array([0, 1]), np.array([1.0, 1.0]), np.array([0.4, 0.6]))
    assert y_marginal(mu, 3).tolist() == [0.4, 0.6, 0.0]
    assert s_marginal(mu) == [(1.0, 1.0)]
    mu = Belief(np.array([0, 0]), np.array([1.0, 2.0]), np.array([0.4, 0.6]))
    assert y_marginal(mu, 2).tolist() == [1.0, 0.0]
    assert s_marginal(mu) == [(1.0, 0.4), (2.0, 0.6)]


def test_canonicalize_examples():
    mu = Belief.from_atoms([(0, 1.0, 0.5), (0, 1.0 + 1e-12, 0.5)])
    assert len(mu) == 1 and mu.y[0] == 0 and mu.w[0] == 1.0
    assert abs(mu.s[0] - 1.0) <= 1e-12
    assert canonicalize(mu) == mu
    mu = Belief.from_atoms([(0, 1.0, 1.0), (1, 2.0, 1e-20)])
    assert mu.atoms() == [(0, 1.0, 1.0)]


def test_augmented_state_z_range():
    mu = Belief.from_atoms([(0, 0.0, 1.0)])
    with pytest.raises(ValueError):
        AugmentedState(0, mu, 0.0)
    assert AugmentedState(0, mu, 1.0).z == 1.0


def test_single_hidden_state_running_cost():
    spec = random_spec(4, 2, 1, 2, 2, 0.7)
    h = History((0, 1, 1, 0), ((0, 1), (1, 1), (0, 0)))
    mus = filter(spec, h)
    expect = 0.0
    z = 1.0
    for k, (a, b) in enumerate(h.actions):
        expect += z * spec.cost[h.states[k], 0, a, b]
        z *= 0.7
    assert mus[-1].atoms() == [(0, pytest.approx(expect, abs=1e-15), 1.0)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.integers(0, 7), min_size=0, max_size=3))
def test_filter_matches_exact_posterior(seed, steps):
    spec = random_spec(seed, 2, 2, 2, 2, 0.9)
    states, actions = [0], []
    for code in steps:
        actions.append((code >> 2 & 1, code >> 1 & 1))
        states.append(code & 1)
    h = History(tuple(states), tuple(actions))
    mus = filter(spec, h)
    assert len(mus) == len(h) + 1
    for mu in mus:
        assert abs(mu.w.sum() - 1.0) <= 1e-12 and np.all(mu.w > 0)
    assert oracle.total_variation(mus[-1].atoms(), oracle.exact_posterior(spec, h)) <= 1e-9


def test_support_growth_law():
    spec = random_spec(9, 2, 3, 2, 2, 0.8)
    mu = filter(spec, History((0, 1), ((1, 1),)))[-1]
    nxt = phi_update(spec, 1, 0, 1, 0, mu, 0.8, merge_tol=0.0)
    allowed = {(y2, s + 0.8 * spec.cost[1, y, 0, 1]) for y, s, _ in mu.atoms() for y2 in range(3)}
    for y2, s2, _ in nxt.atoms():
        assert (y2, s2) in allowed
