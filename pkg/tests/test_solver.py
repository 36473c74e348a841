import json
import math

import numpy as np
import pytest

from pogs import oracle, solver
from pogs.belief import AugmentedState, Belief, initial_belief, phi_update
from pogs.cli import dumps
from pogs.errors import NodeBudgetExceeded, PolicyUndefined
from pogs.model import Utility, make_spec, random_spec

from conftest import random_policy


def singleton_spec(ny=2, beta=0.5, utility=None, seed=0):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(1, 2, size=(2, ny, 1, 1))
    kern = rng.dirichlet(np.ones(2 * ny), size=(2, ny, 1, 1)).reshape(2, ny, 1, 1, 2, ny)
    return make_spec(cost, kern, rng.dirichlet(np.ones(ny)), beta, utility)


def test_v0_terminal_examples():
    lin = Utility.linear()
    assert solver.v0_terminal(Belief.from_atoms([(0, 2.0, 1.0)]), lin) == 2.0
    assert solver.v0_terminal(Belief.from_atoms([(0, 0.0, 1.0)]), Utility.exponential(1.0)) == 1.0
    assert solver.v0_terminal(Belief.from_atoms([(0, 1.0, 0.5), (1, 3.0, 0.5)]), lin) == 2.0


def test_payoff_matrix_constant_and_singleton(micro):
    st = AugmentedState(0, initial_belief(micro), 1.0)
    M = solver.payoff_matrix(micro, st, lambda x, mu, z: 3.5)
    np.testing.assert_allclose(M, 3.5, rtol=1e-15)
    spec = singleton_spec()
    M = solver.payoff_matrix(spec, AugmentedState(1, initial_belief(spec), 1.0),
                             lambda x, mu, z: float(x))
    assert M.shape == (1, 1)


def test_payoff_matrix_matches_triple_sum():
    spec = random_spec(21, 2, 2, 2, 2, 0.6, Utility.exponential(0.5))
    q0 = spec.initial_hidden
    st = AugmentedState(1, initial_belief(spec), 1.0)
    U = spec.utility

    def v_next(x, mu, z):
        return solver.v0_terminal(mu, U)

    M = solver.payoff_matrix(spec, st, v_next)
    for a in range(2):
        for b in range(2):
            # sum over x', y, y' of Q0(y) q(x', y' | 1, y, a, b) U(C(1, y, a, b))
            direct = sum(q0[y] * spec.kernel[1, y, a, b, xn, y2] * U(spec.cost[1, y, a, b])
                         for xn in range(2) for y in range(2) for y2 in range(2))
            assert M[a, b] == pytest.approx(direct, rel=1e-13)


def test_bellman_monotone(micro):
    st = AugmentedState(0, initial_belief(micro), 1.0)
    lo, *_ = solver.bellman_T(micro, st, lambda x, mu, z: solver.v0_terminal(mu, micro.utility))
    hi, zeta, eta = solver.bellman_T(micro, st, lambda x, mu, z: solver.bound_upper(mu, z, micro))
    assert lo <= hi
    assert zeta.sum() == pytest.approx(1.0) and eta.sum() == pytest.approx(1.0)


def test_solve_finite_trivial_cases(micro):
    r = solver.solve_finite(micro, 0, 0)
    assert r.value == 0.0 and r.policy.table == {}
    spec = singleton_spec(utility=Utility.power(2.0))
    r = solver.solve_finite(spec, 1, 1)
    expect = sum(spec.initial_hidden[y] * spec.cost[1, y, 0, 0] ** 2 for y in range(2))
    assert r.value == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_solve_finite_matches_normal_form(seed):
    spec = random_spec(seed, 2, 2, 2, 2, 0.5)
    v = solver.solve_finite(spec, 0, 2).value
    lo, hi = oracle.normal_form_value(spec, 0, 2)
    assert lo - 1e-8 <= v <= hi + 1e-8


@pytest.mark.parametrize("u", [Utility.linear(), Utility.log1p(), Utility.exponential(1.0)])
def test_value_nondecreasing_in_horizon(u):
    spec = random_spec(5, 2, 2, 2, 2, 0.7, u)
    vals = [solver.solve_finite(spec, 0, n).value for n in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_memo_does_not_change_results(micro):
    a = solver.solve_finite(micro, 1, 3, memo=True)
    b = solver.solve_finite(micro, 1, 3, memo=False)
    assert a == b and a.value == b.value


def test_memo_collapses_repeated_beliefs():
    spec = random_spec(2, 2, 1, 2, 2, 0.5)
    cost = np.ones_like(spec.cost)
    spec = spec.replace(cost=cost)
    a = solver.solve_finite(spec, 0, 3, memo=True)
    b = solver.solve_finite(spec, 0, 3, memo=False)
    assert a == b and a.evaluations < b.evaluations


def test_composition_identity(micro):
    r = solver.solve_finite(micro, 0, 3)
    assert solver.evaluate_policy_pair(micro, 0, r.policy, r.policy, 3) == pytest.approx(r.value, abs=1e-9)


def test_evaluate_policy_pair_vs_enumeration():
    rng = np.random.default_rng(0)
    for seed in range(3):
        spec = random_spec(seed, 2, 3, 2, 2, 0.9, Utility.log1p())
        for N in range(4):
            p1, p2 = random_policy(rng, spec.admissible_p1), random_policy(rng, spec.admissible_p2)
            assert solver.evaluate_policy_pair(spec, 1, p1, p2, N) == pytest.approx(
                oracle.enumerate_value(spec, 1, p1, p2, N), abs=1e-9)


def test_evaluate_singleton_equals_solve():
    spec = singleton_spec(ny=3)
    one = lambda h: np.ones(1)
    assert solver.evaluate_policy_pair(spec, 0, one, one, 3) == pytest.approx(
        solver.solve_finite(spec, 0, 3).value, abs=1e-12)
    assert solver.evaluate_policy_pair(spec, 0, one, one, 0) == 0.0


def test_policy_undefined(micro):
    r = solver.solve_finite(micro, 0, 1)
    with pytest.raises(PolicyUndefined):
        solver.evaluate_policy_pair(micro, 0, r.policy, r.policy, 2)


def test_bounds_examples():
    spec = make_spec(np.full((1, 1, 1, 1), 2.0), np.ones((1, 1, 1, 1, 1, 1)), [1.0], 0.5)
    mu = initial_belief(spec)
    assert solver.bound_upper(mu, 1.0, spec) == 4.0
    assert solver.bound_lower(mu, 1.0, spec) == 4.0
    spec = random_spec(1, 2, 2, 2, 2, 0.5, Utility.log1p())
    mu = Belief.from_atoms([(0, 0.3, 0.4), (1, 1.2, 0.6)])
    assert solver.bound_lower(mu, 0.5, spec) >= solver.v0_terminal(mu, spec.utility)


def test_tail_bound_examples():
    cost = np.array([[[[1.0, 2.0]]]])
    spec = make_spec(cost, np.ones((1, 1, 1, 2, 1, 1)), [1.0], 0.5)
    mu = initial_belief(spec)
    assert solver.tail_bound(spec, 3, 1.0, mu) == pytest.approx(0.5)
    ex = spec.replace(utility=Utility.exponential(1.0))
    assert solver.tail_bound(ex, 2, 1.0, mu) == pytest.approx(0.25 * 4 * math.exp(4))
    cc = spec.replace(utility=Utility.log1p())
    for n in range(5):
        assert solver.tail_bound(cc, n + 1, 1.0, mu) / solver.tail_bound(cc, n, 1.0, mu) == pytest.approx(0.5, rel=1e-15)


def test_annuity():
    cost = np.full((2, 1, 1, 1), 1.5)
    kern = np.full((2, 1, 1, 1, 2, 1), 0.5)
    spec = make_spec(cost, kern, [1.0], 0.6)
    for tol in (1e-1, 1e-3):
        r = solver.solve_infinite(spec, 0, tol)
        assert r.bracket[0] == pytest.approx(1.5 / 0.4, rel=1e-14)
        assert r.bracket[1] == pytest.approx(1.5 / 0.4, rel=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_infinite_contains_shapley_value(seed):
    spec = random_spec(seed, 3, 1, 2, 2, 0.2)
    r = solver.solve_infinite(spec, 0, 1e-3)
    ref = oracle.shapley_value(spec, 1e-10)[0]
    assert r.bracket[0] - 1e-12 <= ref <= r.bracket[1] + 1e-12
    assert r.bracket[1] - r.bracket[0] <= 1e-3


def test_infinite_bracket_properties():
    spec = random_spec(8, 2, 2, 2, 2, 0.2, Utility.power(2.0))
    mu0 = initial_belief(spec)
    r = solver.solve_infinite(spec, 0, 1e-2)
    lo, up, v0 = (np.array(r.backups[k]) for k in ("lower", "upper", "v0"))
    assert up[0] - lo[0] == pytest.approx(solver.bound_upper(mu0, 1, spec) - solver.bound_lower(mu0, 1, spec))
    assert r.bracket[1] - r.bracket[0] <= 1e-2
    assert np.all(np.diff(lo) >= 0) and np.all(np.diff(up) <= 0) and np.all(v0 <= lo)
    assert r.suboptimality <= r.tail_bound + 1e-12
    assert r.bound_type == "delta_convex"


def test_infinite_parallel_identical():
    spec = random_spec(3, 2, 2, 2, 2, 0.2, Utility.exponential(0.5))
    a = solver.solve_infinite(spec, 0, 1e-2, workers=1)
    b = solver.solve_infinite(spec, 0, 1e-2, workers=3)
    assert a == b and dumps(a.to_json(spec)) == dumps(b.to_json(spec))


def test_infinite_budget_reports_achievable():
    spec = random_spec(3, 2, 2, 2, 2, 0.5)
    with pytest.raises(NodeBudgetExceeded) as exc:
        solver.solve_infinite(spec, 0, 1e-6, node_budget=1000)
    assert exc.value.achievable > 1e-6
    r = solver.solve_infinite(spec, 0, exc.value.achievable, node_budget=1000)
    assert r.bracket[1] - r.bracket[0] <= exc.value.achievable


def test_finite_budget():
    spec = random_spec(3, 2, 2, 2, 2, 0.5)
    with pytest.raises(NodeBudgetExceeded):
        solver.solve_finite(spec, 0, 4, node_budget=50)


def test_result_json_round_trip(micro):
    for r in (solver.solve_finite(micro, 0, 2),
              solver.solve_infinite(micro.replace(discount=0.2), 0, 1e-2)):
        doc = json.loads(dumps(r.to_json(micro)))
        back = solver.SolveResult.from_json(micro, doc)
        assert back == r


def test_policy_tree_lookup(micro):
    r = solver.solve_finite(micro, 0, 2)
    tree = r.policy
    assert len(tree.table) == 1 + 4 * 2
    np.testing.assert_array_equal(tree.pi((0,)), tree.table[()][0])
    assert tree.sigma((0, 1, 0, 1)).sum() == pytest.approx(1.0)
    with pytest.raises(PolicyUndefined):
        tree.pi((1,))
