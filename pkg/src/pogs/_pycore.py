"""NumPy implementation of the hot kernels.

Mirrors ``pogs._core`` (Cython) function for function; selected at import when
the extension is unavailable or ``POGS_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import numpy as np

from pogs.errors import NodeBudgetExceeded

NAME = "python"

DROP_WEIGHT = 1e-15
RENORM_SLACK = 1e-14
PIVOT_EPS = 1e-12


def utility_values(kind, param, s):
    if kind == 0:
        return s
    if kind == 1:
        return np.exp(param * s) / param
    if kind == 2:
        return np.power(s, param)
    return np.log1p(s)


def canonicalize(y, s, w, tol):
    """Sort atoms by (y, s), merge same-y runs with gaps <= tol, prune, renormalize."""
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=float)
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if n == 0:
        return y, s, w
    order = np.lexsort((w, s, y))
    y, s, w = y[order], s[order], w[order]
    if n > 1:
        brk = np.empty(n, dtype=bool)
        brk[0] = True
        brk[1:] = (y[1:] != y[:-1]) | ((s[1:] - s[:-1]) > tol)
        starts = np.flatnonzero(brk)
        if starts.shape[0] < n:
            ws = np.add.reduceat(w, starts)
            sw = np.add.reduceat(w * s, starts)
            counts = np.diff(np.append(starts, n))
            lo = s[starts]
            hi = s[starts + counts - 1]
            s = np.where(counts == 1, lo, np.clip(sw / ws, lo, hi))
            y, w = y[starts], ws
    keep = w >= DROP_WEIGHT
    dropped = not keep.all()
    if dropped:
        y, s, w = y[keep], s[keep], w[keep]
    total = w.sum()
    if dropped or abs(total - 1.0) > RENORM_SLACK:
        w = w / total
    return y, s, w


def phi_update(cost, kernel, qx, y, s, w, x, a, b, xn, z, tol):
    """Bayes update of an atomic belief; returns (y, s, w, denominator).

    Empty arrays are returned when the denominator is not positive.
    """
    y = np.asarray(y, dtype=np.int64)
    ny = kernel.shape[5]
    denom = float(w @ qx[x, y, a, b, xn])
    if not denom > 0.0:
        empty = np.empty(0)
        return np.empty(0, dtype=np.int64), empty, empty, denom
    shifted = s + z * cost[x, y, a, b]
    joint = w[:, None] * kernel[x, y, a, b, xn, :]
    nz = joint > 0.0
    rows, cols = np.nonzero(nz)
    y2 = cols.astype(np.int64)
    s2 = shifted[rows]
    w2 = joint[rows, cols] / denom
    y2, s2, w2 = canonicalize(y2, s2, w2, tol)
    return y2, s2, w2, denom


def solve_game(M):
    """Value and optimal strategies of the zero-sum matrix game M (rows maximize).

    Dense tableau simplex on max 1'q s.t. (M + shift) q <= 1, q >= 0, with
    Bland's rule (lowest-index entering column, lowest basic index on ratio ties).
    """
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    shift = 1.0 - M.min()
    width = n + m + 1
    T = np.zeros((m + 1, width))
    T[:m, :n] = M + shift
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = 1.0
    T[m, :n] = -1.0
    basis = list(range(n, n + m))
    for _ in range(1000 * (m + n)):
        neg = np.flatnonzero(T[m, :-1] < -PIVOT_EPS)
        if neg.shape[0] == 0:
            break
        e = int(neg[0])
        leave, best = -1, 0.0
        for i in range(m):
            piv = T[i, e]
            if piv > PIVOT_EPS:
                r = T[i, -1] / piv
                tie = PIVOT_EPS * (1.0 + abs(best))
                if leave < 0 or r < best - tie:
                    leave, best = i, r
                elif r <= best + tie and basis[i] < basis[leave]:
                    leave, best = i, min(best, r)
        if leave < 0:
            raise RuntimeError("matrix game LP unbounded")
        T[leave] /= T[leave, e]
        col = T[:, e].copy()
        col[leave] = 0.0
        T -= np.outer(col, T[leave])
        T[:, e] = 0.0
        T[leave, e] = 1.0
        basis[leave] = e
    else:
        raise RuntimeError("simplex iteration limit reached")
    q = np.zeros(n)
    for i, j in enumerate(basis):
        if j < n:
            q[j] = max(T[i, -1], 0.0)
    p = np.maximum(T[m, n:n + m], 0.0)
    q /= q.sum()
    p /= p.sum()
    value = float(p @ M @ q)
    return value, p, q


def terminal_payoffs(cost, adm1, adm2, ukind, uparam, beta, consts, x, y, s, w, z):
    """Payoff matrices one stage before the leaves, shape (J, |A(x)|, |B(x)|).

    Entry (j, a, b) = sum_i w_i U(s_i + z C(x, y_i, a, b) + beta z consts[j]); the
    leaf beliefs are integrated out analytically.
    """
    A = np.flatnonzero(adm1[x])
    B = np.flatnonzero(adm2[x])
    C = cost[x][np.asarray(y, dtype=np.int64)][:, A][:, :, B]  # (n, |A|, |B|)
    base = s[:, None, None] + z * C
    extra = beta * z * np.asarray(consts, dtype=float)
    vals = utility_values(ukind, uparam, base[:, None, :, :] + extra[None, :, None, None])
    return np.einsum("i,ijab->jab", w, vals)


def horizon_values(cost, kernel, qx, adm1, adm2, beta, ukind, uparam, consts,
                   x, y, s, w, z, H, tol, budget):
    """Backed-up values T^h(leaf_j) at one node for h = 0..H and every leaf j.

    ``leaf_j(x, mu, z) = sum w U(s + z * consts[j])``. Returns (values of shape
    (H + 1, J), number of belief nodes visited).
    """
    consts = np.asarray(consts, dtype=float)
    counter = [0]

    def node(x, y, s, w, z, H):
        counter[0] += 1
        if counter[0] > budget:
            raise NodeBudgetExceeded("node budget exceeded", nodes=counter[0])
        out = np.empty((H + 1, consts.shape[0]))
        out[0] = utility_values(ukind, uparam, s[None, :] + z * consts[:, None]) @ w
        if H == 0:
            return out
        A = np.flatnonzero(adm1[x])
        B = np.flatnonzero(adm2[x])
        if H == 1:
            M = terminal_payoffs(cost, adm1, adm2, ukind, uparam, beta, consts, x, y, s, w, z)[None]
        else:
            M = np.zeros((H, consts.shape[0], A.shape[0], B.shape[0]))
            for ia, a in enumerate(A):
                for ib, b in enumerate(B):
                    qrow = w @ qx[x, y, a, b, :]
                    for xn in range(qrow.shape[0]):
                        if qrow[xn] > 0.0:
                            y2, s2, w2, _ = phi_update(cost, kernel, qx, y, s, w, x, a, b, xn, z, tol)
                            child = node(xn, y2, s2, w2, beta * z, H - 1)
                            M[:, :, ia, ib] += qrow[xn] * child
        for h in range(1, H + 1):
            for j in range(consts.shape[0]):
                out[h, j] = solve_game(M[h - 1, j])[0]
        return out

    vals = node(int(x), np.asarray(y, dtype=np.int64), np.asarray(s, dtype=float),
                np.asarray(w, dtype=float), float(z), int(H))
    return vals, counter[0]
