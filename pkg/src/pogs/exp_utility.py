"""Exponential-utility fast path.

For U(s) = exp(theta s) / theta the accumulated cost factors out of the
value, so the belief can live on Y alone: the stage cost is folded into the
transition weight as exp(theta z C) and the recursion runs on X x P(Y) x (0, 1].
"""
from __future__ import annotations

import numpy as np

from pogs.errors import ExponentOverflow, ImpossibleObservation
from pogs.matrix_game import solve_matrix_game
from pogs.model import GameSpec, require_valid

EXPONENT_LIMIT = 700.0


def _tilt(spec: GameSpec, x, a, b, t) -> np.ndarray:
    expo = t * spec.cost[x, :, a, b]
    worst = float(np.abs(expo).max())
    if worst > EXPONENT_LIMIT:
        raise ExponentOverflow(worst)
    return np.exp(expo)


def q_hat_x(spec: GameSpec, x, mu, a, b, z) -> np.ndarray:
    """Unnormalized observable kernel sum_y mu(y) e^{z C(x,y,a,b)} q^X(. | x, y, a, b)."""
    spec.require_admissible(x, a, b)
    mu = np.asarray(mu, dtype=float)
    return (mu * _tilt(spec, x, a, b, z)) @ spec.qx[x, :, a, b, :]


def phi_e_update(spec: GameSpec, x, a, b, x_next, mu, z) -> np.ndarray:
    """Cost-tilted posterior over y' after observing x_next."""
    spec.require_admissible(x, a, b)
    mu = np.asarray(mu, dtype=float)
    joint = (mu * _tilt(spec, x, a, b, z)) @ spec.kernel[x, :, a, b, x_next, :]
    denom = joint.sum()
    if not denom > 0.0:
        raise ImpossibleObservation(
            f"impossible observation: x'={spec.observable_states[x_next]} has zero probability")
    return joint / denom


def solve_finite_exp(spec: GameSpec, x0: int, N: int) -> float:
    """N-stage value alpha_N(x0, Q0, theta) via the tilted recursion.

    alpha_0 = 1/theta and alpha_{n+1}(x, mu, t) is the value of the matrix game
    with entries sum_x' alpha_n(x', Phi_e(x, a, b, x', mu, t), beta t) Qhat^X(x' | x, mu, a, b, t).
    """
    require_valid(spec)
    U = spec.utility
    if U.kind != "exponential" or not U.param > 0:
        raise ValueError("fast path requires θ>0 (exponential utility)")
    if N < 0:
        raise ValueError("horizon must be >= 0")
    theta, beta = U.param, spec.discount

    def alpha(x, mu, t, n):
        if n == 0:
            return 1.0 / theta
        A, B = spec.actions1(x), spec.actions2(x)
        M = np.zeros((A.shape[0], B.shape[0]))
        for ia, a in enumerate(A):
            for ib, b in enumerate(B):
                qh = q_hat_x(spec, x, mu, a, b, t)
                for xn in np.flatnonzero(qh > 0):
                    nxt = phi_e_update(spec, x, a, b, xn, mu, t)
                    M[ia, ib] += qh[xn] * alpha(int(xn), nxt, beta * t, n - 1)
        return solve_matrix_game(M).value

    return float(alpha(int(x0), spec.initial_hidden.copy(), theta, N))
