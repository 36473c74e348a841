import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pogs import oracle
from pogs.matrix_game import solve_matrix_game

matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda mn: arrays(float, mn, elements=st.floats(-10, 10, allow_nan=False)))


def test_examples():
    s = solve_matrix_game([[5.0]])
    assert s.value == 5.0 and s.row_strategy.tolist() == [1.0] and s.col_strategy.tolist() == [1.0]
    s = solve_matrix_game([[1.0, -1.0], [-1.0, 1.0]])
    assert abs(s.value) < 1e-12
    np.testing.assert_allclose(s.row_strategy, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(s.col_strategy, [0.5, 0.5], atol=1e-12)
    s = solve_matrix_game([[3.0, 2.0], [1.0, 0.0]])
    assert s.value == pytest.approx(2.0, abs=1e-12)
    assert s.row_strategy.tolist() == [1.0, 0.0] and s.col_strategy.tolist() == [0.0, 1.0]


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_matrix_game([[1.0, np.inf]])
    with pytest.raises(ValueError):
        solve_matrix_game(np.zeros((0, 2)))


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_saddle_and_duality(M):
    s = solve_matrix_game(M)
    assert s.residual <= 1e-9
    assert s.row_strategy @ M @ s.col_strategy == pytest.approx(s.value, abs=1e-9)
    t = solve_matrix_game(-M.T)
    assert s.value == pytest.approx(-t.value, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(matrices, st.floats(0.1, 10), st.floats(-5, 5))
def test_shift_scale(M, alpha, c):
    assert solve_matrix_game(alpha * M + c).value == pytest.approx(
        alpha * solve_matrix_game(M).value + c, abs=1e-9 * max(1.0, alpha))


@settings(max_examples=100, deadline=None)
@given(matrices, st.integers(0, 2**31))
def test_monotone_and_lipschitz(M, seed):
    D = np.random.default_rng(seed).uniform(-1, 1, size=M.shape)
    v, w = solve_matrix_game(M).value, solve_matrix_game(M + D).value
    assert abs(v - w) <= np.abs(D).max() + 1e-9
    assert v <= solve_matrix_game(M + np.abs(D)).value + 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_matches_support_enumeration_and_lp(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(rng.integers(1, 6), rng.integers(1, 6)))
    v = solve_matrix_game(M).value
    assert v == pytest.approx(oracle.matrix_game_value(M)[0], abs=1e-9)
    lo, hi, _, _ = oracle._lp_game(M)
    assert lo - 1e-9 <= v <= hi + 1e-9


def test_deterministic():
    M = np.random.default_rng(3).normal(size=(5, 4))
    a, b = solve_matrix_game(M), solve_matrix_game(M.copy())
    assert a.value == b.value and np.array_equal(a.row_strategy, b.row_strategy)
