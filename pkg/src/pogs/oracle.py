"""Independent reference computations.

Everything here is written directly against the model tables: exhaustive
enumeration of hidden trajectories along observable paths, brute-force
posteriors, Monte Carlo rollouts, a classical Shapley iteration for the
fully observable risk-neutral case, and a normal-form game over pure
history-dependent policies. Nothing is shared with the belief filter or the
tree solver, so agreement between the two is evidence rather than tautology.

Monte Carlo randomness: numpy's PCG64 bit generator. ``simulate_mc`` splits
the rollouts into fixed chunks of ``MC_CHUNK`` samples; chunk ``i`` draws from
``PCG64(SeedSequence(seed).spawn(n_chunks)[i])``. Within a chunk each step
draws, in order, one uniform vector for the initial hidden state (step 0
only), then player 1's action, player 2's action and the joint successor
(x', y'), each mapped through the inverse CDF of the relevant pmf. Results
therefore do not depend on the number of worker processes.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from pogs.errors import ImpossibleObservation, NodeBudgetExceeded, PolicyUndefined
from pogs.model import GameSpec, History

SADDLE_TOL = 1e-8
MC_CHUNK = 8192
Z95 = 1.959963984540054
DEFAULT_BUDGET = 2_000_000


def _as_rule(policy, attr):
    # PolicyTree-like objects expose .pi / .sigma; plain callables are used as given
    return getattr(policy, attr, policy)


class UniformPolicy:
    """Uniform mixed action over the admissible set at the current state."""

    def __init__(self, admissible):
        self.admissible = np.asarray(admissible, dtype=float)

    def __call__(self, h):
        row = self.admissible[h[-1]]
        return row / row.sum()


def uniform_policy(spec: GameSpec, player: int) -> UniformPolicy:
    return UniformPolicy(spec.admissible_p1 if player == 1 else spec.admissible_p2)


def _walk(spec: GameSpec, x0, N, budget, fixed=None, prefixes=False):
    """Yield (path, y, C, p) for each observable path of length N.

    ``path`` is a tuple of (a, b, x') steps; (y, C, p) are the current hidden
    state, discounted cost and joint probability of every hidden trajectory
    consistent with the path. Paths of zero probability are skipped. When
    ``fixed`` is given only that path is followed; with ``prefixes`` every
    path of length <= N is yielded.
    """
    nx, ny = spec.shape[:2]
    beta = spec.discount
    y0 = np.flatnonzero(spec.initial_hidden > 0)
    count = [0]

    def rec(x, path, y, C, p, z, k):
        count[0] += y.shape[0]
        if count[0] > budget:
            raise NodeBudgetExceeded(f"enumeration budget {budget} exceeded", nodes=count[0])
        if k == N or prefixes:
            yield path, y, C, p
        if k == N:
            return
        steps = [fixed[k]] if fixed is not None else [
            (a, b, xn) for a in np.flatnonzero(spec.admissible_p1[x])
            for b in np.flatnonzero(spec.admissible_p2[x]) for xn in range(nx)]
        for a, b, xn in steps:
            a, b, xn = int(a), int(b), int(xn)
            t = p[:, None] * spec.kernel[x, y, a, b, xn, :]
            i, yn = np.nonzero(t > 0)
            if i.shape[0] == 0:
                continue
            cost = C + z * spec.cost[x, y, a, b]
            yield from rec(xn, path + ((a, b, xn),), yn, cost[i], t[i, yn], z * beta, k + 1)

    yield from rec(int(x0), (), y0, np.zeros(y0.shape[0]), spec.initial_hidden[y0].copy(), 1.0, 0)


def _flat(x0, path, k):
    out = [int(x0)]
    for a, b, xn in path[:k]:
        out += [a, b, xn]
    return tuple(out)


def _prob(rule, h, idx, who):
    try:
        vec = np.asarray(rule(h), dtype=float)
    except (KeyError, IndexError) as exc:
        raise PolicyUndefined(f"{who} policy undefined at history {h}") from exc
    return float(vec[idx])


def _path_weight(x0, path, pi, sigma, cache):
    w = 1.0
    for k, (a, b, _) in enumerate(path):
        h = _flat(x0, path, k)
        key = (h, a, b)
        if key not in cache:
            cache[key] = _prob(pi, h, a, "player 1") * _prob(sigma, h, b, "player 2")
        w *= cache[key]
        if w == 0.0:
            break
    return w


def enumerate_value(spec: GameSpec, x0, pi, sigma, N, budget=DEFAULT_BUDGET, return_mass=False):
    """Exact E[U(C_N)] by summing over all trajectories (x, y, a, b)_k.

    ``pi``/``sigma`` map a flat observable history (x0, a0, b0, x1, ...) to a
    mixed action over the full action set.
    """
    pi, sigma = _as_rule(pi, "pi"), _as_rule(sigma, "sigma")
    U = spec.utility
    value = mass = 0.0
    cache = {}
    for path, _, C, p in _walk(spec, x0, N, budget):
        w = _path_weight(x0, path, pi, sigma, cache)
        if w > 0.0:
            value += w * float(p @ U(C))
            mass += w * float(p.sum())
    return (value, mass) if return_mass else value


def exact_posterior(spec: GameSpec, history: History, pi=None, sigma=None) -> list:
    """Brute-force conditional law of (y_n, S_n) given an observable history.

    Returns atoms ``(y, s, w)`` sorted by (y, s); atoms with identical (y, s) are
    combined. Policies default to uniform over admissible actions.
    """
    pi = _as_rule(pi, "pi") if pi is not None else uniform_policy(spec, 1)
    sigma = _as_rule(sigma, "sigma") if sigma is not None else uniform_policy(spec, 2)
    x0 = history.states[0]
    path = tuple((int(a), int(b), int(xn)) for (a, b), xn in zip(history.actions, history.states[1:]))
    found = list(_walk(spec, x0, len(path), DEFAULT_BUDGET, fixed=path))
    if not found:
        raise ImpossibleObservation("history has zero probability")
    _, y, C, p = found[0]
    p = p * _path_weight(x0, path, pi, sigma, {})
    if not p.sum() > 0:
        raise ImpossibleObservation("history has zero probability under the given policies")
    y, C, w = _aggregate(y, C, p)
    return list(zip(y.tolist(), C.tolist(), w.tolist()))


def _aggregate(y, C, p):
    order = np.lexsort((C, y))
    y, C, p = y[order], C[order], p[order] / p.sum()
    start = np.ones(y.shape[0], dtype=bool)
    start[1:] = (y[1:] != y[:-1]) | (C[1:] != C[:-1])
    idx = np.flatnonzero(start)
    return y[idx], C[idx], np.add.reduceat(p, idx)


def all_posteriors(spec: GameSpec, x0, depth, budget=DEFAULT_BUDGET) -> dict:
    """Exact posteriors for every positive-probability history of length <= depth.

    Same computation as :func:`exact_posterior` with the policy factor
    omitted (it is common to every hidden trajectory of a path and cancels).
    Values are ``(y, s, w)`` arrays.
    """
    return {path: _aggregate(y, C, p)
            for path, y, C, p in _walk(spec, x0, depth, budget, prefixes=True)}


def _columns(atoms):
    # accepts a list of (y, s, w) atoms or a (y, s, w) triple of arrays
    if isinstance(atoms, tuple) and len(atoms) == 3 and isinstance(atoms[0], np.ndarray):
        return (np.asarray(atoms[0], dtype=float), np.asarray(atoms[1], dtype=float),
                np.asarray(atoms[2], dtype=float))
    a = np.array(atoms, dtype=float).reshape(-1, 3)
    return a[:, 0], a[:, 1], a[:, 2]


def total_variation(atoms1, atoms2, s_tol=1e-12) -> float:
    """TV distance between atomic laws on Y x R, identifying s within ``s_tol``.

    Atoms of both inputs are pooled, sorted by (y, s) and clustered by gaps
    <= s_tol; the distance is half the summed absolute weight difference.
    """
    y1, s1, w1 = _columns(atoms1)
    y2, s2, w2 = _columns(atoms2)
    y = np.concatenate([y1, y2])
    s = np.concatenate([s1, s2])
    w = np.concatenate([w1, -w2])
    if w.shape[0] == 0:
        return 0.0
    order = np.lexsort((s, y))
    y, s, w = y[order], s[order], w[order]
    start = np.ones(y.shape[0], dtype=bool)
    start[1:] = (y[1:] != y[:-1]) | (np.diff(s) > s_tol)
    return 0.5 * float(np.abs(np.add.reduceat(w, np.flatnonzero(start))).sum())


# -- Monte Carlo ---------------------------------------------------------------

def _inverse_cdf(pmf, u):
    cdf = np.cumsum(pmf, axis=1)
    idx = (u[:, None] * cdf[:, -1:] >= cdf).sum(axis=1)
    return idx


def _rollout_chunk(args):
    spec, x0, pi, sigma, N, n, seed_seq = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    nx, ny, na, nb = spec.shape
    beta = spec.discount
    x = np.full(n, int(x0), dtype=np.int64)
    y = _inverse_cdf(np.broadcast_to(spec.initial_hidden, (n, ny)), rng.random(n))
    C = np.zeros(n)
    hist = np.full((n, 1), int(x0), dtype=np.int64)
    z = 1.0
    for _ in range(N):
        groups, inv = np.unique(hist, axis=0, return_inverse=True)
        inv = inv.ravel()
        zeta = np.array([np.asarray(pi(tuple(int(v) for v in g)), dtype=float) for g in groups])
        eta = np.array([np.asarray(sigma(tuple(int(v) for v in g)), dtype=float) for g in groups])
        a = _inverse_cdf(zeta[inv], rng.random(n))
        b = _inverse_cdf(eta[inv], rng.random(n))
        C += z * spec.cost[x, y, a, b]
        nxt = _inverse_cdf(spec.kernel[x, y, a, b].reshape(n, nx * ny), rng.random(n))
        x, y = nxt // ny, nxt % ny
        hist = np.column_stack([hist, a, b, x])
        z *= beta
    return spec.utility(C)


def simulate_mc(spec: GameSpec, x0, pi, sigma, N, samples, seed, workers=1):
    """Monte Carlo estimate of E[U(C_N)]; returns (mean, 95% half-width).

    The half-width is 1.96 sd / sqrt(samples) with the unbiased sd; it is
    infinite for a single sample.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pi, sigma = _as_rule(pi, "pi"), _as_rule(sigma, "sigma")
    sizes = [MC_CHUNK] * (samples // MC_CHUNK)
    if samples % MC_CHUNK:
        sizes.append(samples % MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    tasks = [(spec, x0, pi, sigma, N, n, ss) for n, ss in zip(sizes, seeds)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_rollout_chunk, tasks))
    else:
        parts = [_rollout_chunk(t) for t in tasks]
    vals = np.concatenate(parts)
    mean = float(vals.mean())
    if samples == 1:
        return mean, math.inf
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    return mean, float(Z95 * vals.std(ddof=1) / math.sqrt(samples))


# -- matrix games and Shapley iteration -----------------------------------------

def _lp_game(M):
    """(lower, upper, row, col) for the matrix game M via two HiGHS LPs."""
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    # rows: max v s.t. p'M >= v, sum p = 1
    res = linprog(np.r_[np.zeros(m), -1.0], A_ub=np.c_[-M.T, np.ones(n)], b_ub=np.zeros(n),
                  A_eq=np.r_[np.ones(m), 0.0][None], b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs", options=opts)
    res2 = linprog(np.r_[np.zeros(n), 1.0], A_ub=np.c_[M, -np.ones(m)], b_ub=np.zeros(m),
                   A_eq=np.r_[np.ones(n), 0.0][None], b_eq=[1.0],
                   bounds=[(0, None)] * n + [(None, None)], method="highs", options=opts)
    if res.status != 0 or res2.status != 0:
        raise RuntimeError("reference LP failed")
    p = np.maximum(res.x[:m], 0.0)
    q = np.maximum(res2.x[:n], 0.0)
    p, q = p / p.sum(), q / q.sum()
    return float((p @ M).min()), float((M @ q).max()), p, q


def matrix_game_value(M, eps=1e-12):
    """Value and strategies of a small matrix game by support enumeration.

    Tries equal-size supports in lexicographic order and accepts the first
    pair whose equalizing strategies are nonnegative and mutual best
    responses. Falls back to the LP when no such pair exists.
    """
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    scale = eps * max(1.0, float(np.abs(M).max()))
    for k in range(1, min(m, n) + 1):
        for I in itertools.combinations(range(m), k):
            for J in itertools.combinations(range(n), k):
                sub = M[np.ix_(I, J)]
                K = np.zeros((k + 1, k + 1))
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                try:
                    K[:k, :k], K[:k, k], K[k, :k] = sub.T, -1.0, 1.0
                    pv = np.linalg.solve(K, rhs)
                    K[:k, :k] = sub
                    qw = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    continue
                if pv[:k].min() < -scale or qw[:k].min() < -scale:
                    continue
                p = np.zeros(m)
                q = np.zeros(n)
                p[list(I)] = np.maximum(pv[:k], 0.0)
                q[list(J)] = np.maximum(qw[:k], 0.0)
                p, q = p / p.sum(), q / q.sum()
                lo, hi = (p @ M).min(), (M @ q).max()
                if hi - lo <= 4 * scale:
                    return float(p @ M @ q), p, q
    lo, hi, p, q = _lp_game(M)
    return 0.5 * (lo + hi), p, q


def shapley_value(spec: GameSpec, tol=1e-10, max_iter=1_000_000) -> np.ndarray:
    """Discounted value of the fully observable risk-neutral game, per x.

    Iterates v(x) = val[C(x,a,b) + beta sum_x' q^X(x'|x,a,b) v(x')] and stops
    once the sup-norm change is at most tol (1 - beta) / (2 beta).
    """
    nx, ny = spec.shape[:2]
    if ny != 1 or spec.utility.kind != "linear":
        raise ValueError("shapley_value requires a single hidden state and linear utility")
    beta = spec.discount
    qx = spec.kernel[:, 0, :, :, :, 0]
    cost = spec.cost[:, 0]
    stop = tol * (1 - beta) / (2 * beta)
    v = np.zeros(nx)
    for _ in range(max_iter):
        new = np.empty(nx)
        for x in range(nx):
            A = np.flatnonzero(spec.admissible_p1[x])
            B = np.flatnonzero(spec.admissible_p2[x])
            M = cost[x][np.ix_(A, B)] + beta * qx[x][np.ix_(A, B)] @ v
            new[x] = matrix_game_value(M)[0]
        done = np.abs(new - v).max() <= stop
        v = new
        if done:
            return v
    raise RuntimeError("Shapley iteration did not converge")


# -- normal form over pure policies ----------------------------------------------

@dataclass
class NormalForm:
    """Payoff matrix of pure history-dependent policies (rows: player 1)."""

    decisions: list            # flat histories where a player moves
    p1_choices: np.ndarray     # (n_pure1, n_decisions) action per decision point
    p2_choices: np.ndarray
    paths: list                # observable paths of length N
    path_value: np.ndarray     # sum over hidden trajectories of p * U(C)
    ind1: np.ndarray           # (n_pure1, n_paths) path consistent with policy
    ind2: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return (self.ind1 * self.path_value) @ self.ind2.T

    def policy(self, player, row):
        """Pure policy ``row`` as a history -> one-hot mixed action map."""
        choices = (self.p1_choices if player == 1 else self.p2_choices)[row]
        size = self._sizes[player - 1]
        table = {}
        for d, h in enumerate(self.decisions):
            vec = np.zeros(size)
            vec[choices[d]] = 1.0
            table[h] = vec
        return table.__getitem__


def normal_form(spec: GameSpec, x0, N, max_pure=4096, budget=DEFAULT_BUDGET) -> NormalForm:
    """Enumerate all deterministic history-dependent policies of both players.

    Decision points are all observable histories of length < N reachable with
    positive probability under some action sequence; paths are all positive
    probability observable paths of length N.
    """
    U = spec.utility
    paths, values = [], []
    for path, _, C, p in _walk(spec, x0, N, budget):
        paths.append(path)
        values.append(float(p @ U(C)))
    decisions = sorted({_flat(x0, path, k) for path in paths for k in range(N)},
                       key=lambda h: (len(h), h))
    dindex = {h: i for i, h in enumerate(decisions)}
    opts1 = [np.flatnonzero(spec.admissible_p1[h[-1]]) for h in decisions]
    opts2 = [np.flatnonzero(spec.admissible_p2[h[-1]]) for h in decisions]
    n1 = math.prod(len(o) for o in opts1)
    n2 = math.prod(len(o) for o in opts2)
    if max(n1, n2) > max_pure:
        raise NodeBudgetExceeded(f"{max(n1, n2)} pure policies exceed the limit {max_pure}")
    ch1 = np.array(list(itertools.product(*opts1)), dtype=np.int64).reshape(n1, len(decisions))
    ch2 = np.array(list(itertools.product(*opts2)), dtype=np.int64).reshape(n2, len(decisions))
    ind1 = np.ones((n1, len(paths)))
    ind2 = np.ones((n2, len(paths)))
    for j, path in enumerate(paths):
        for k, (a, b, _) in enumerate(path):
            d = dindex[_flat(x0, path, k)]
            ind1[:, j] *= ch1[:, d] == a
            ind2[:, j] *= ch2[:, d] == b
    nf = NormalForm(decisions, ch1, ch2, paths, np.array(values), ind1, ind2)
    nf._sizes = (spec.shape[2], spec.shape[3])
    return nf


def normal_form_value(spec: GameSpec, x0, N, **kw):
    """(lower, upper) certified bounds on the N-stage game value via the LP."""
    nf = normal_form(spec, x0, N, **kw)
    lo, hi, _, _ = _lp_game(nf.matrix)
    return lo, hi


@dataclass
class SaddleReport:
    value: float
    p1_best: float       # max over pure pi of J(pi, sigma*)
    p2_best: float       # min over pure sigma of J(pi*, sigma)
    on_path: float       # J(pi*, sigma*)
    violation: float
    passed: bool


def saddle_check(spec: GameSpec, x0, N, result, tol=SADDLE_TOL, **kw) -> SaddleReport:
    """Check J(pi, sigma*) <= v <= J(pi*, sigma) over all pure deviations.

    ``result`` needs ``.value`` and ``.policy`` (with ``.pi``/``.sigma``).
    """
    nf = normal_form(spec, x0, N, **kw)
    pi, sigma = result.policy.pi, result.policy.sigma
    cache1, cache2 = {}, {}
    w1 = np.empty(len(nf.paths))
    w2 = np.empty(len(nf.paths))
    for j, path in enumerate(nf.paths):
        w1[j] = _path_weight(x0, path, pi, lambda h: np.ones(spec.shape[3]), cache1)
        w2[j] = _path_weight(x0, path, lambda h: np.ones(spec.shape[2]), sigma, cache2)
    vs = nf.path_value
    p1_best = float((nf.ind1 @ (w2 * vs)).max()) if N else float(vs.sum())
    p2_best = float((nf.ind2 @ (w1 * vs)).min()) if N else float(vs.sum())
    on_path = float((w1 * w2 * vs).sum())
    v = float(result.value)
    violation = max(p1_best - v, v - p2_best, abs(on_path - v), 0.0)
    return SaddleReport(v, p1_best, p2_best, on_path, violation, violation <= tol)
