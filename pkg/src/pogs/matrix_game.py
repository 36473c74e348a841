"""Finite zero-sum matrix games (rows maximize, columns minimize)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pogs._kernels import core

RESIDUAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MatrixGameSolution:
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    residual: float


def residual(M, value, row, col) -> float:
    """Largest violation of the two guarantee inequalities at ``value``."""
    M = np.asarray(M, dtype=float)
    lo = float((row @ M).min())
    hi = float((M @ col).max())
    return max(value - lo, hi - value, 0.0)


def solve_matrix_game(M, backend=None) -> MatrixGameSolution:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError("payoff matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix has non-finite entries")
    value, row, col = (backend or core).solve_game(M)
    return MatrixGameSolution(value, row, col, residual(M, value, row, col))
