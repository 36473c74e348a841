"""Minimax value iteration on the augmented completely observable game.

States are (x, mu, z) with mu a joint belief over (hidden state, accumulated
cost) and z = beta**depth. The finite-horizon solver expands the reachable
belief tree and backs up matrix-game values; the infinite-horizon solver
brackets the value between backups of the lower and upper cost envelopes.
"""
from __future__ import annotations

import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pogs._kernels import core
from pogs.belief import MERGE_TOL, AugmentedState, Belief, initial_belief, phi_update
from pogs.errors import ModelFormatError, NodeBudgetExceeded, PolicyUndefined
from pogs.matrix_game import MatrixGameSolution, solve_matrix_game
from pogs.model import GameSpec, Utility, q_x_under_belief, require_valid

DEFAULT_NODE_BUDGET = 5_000_000


def node_budget_default() -> int:
    env = os.environ.get("POGS_NODE_BUDGET")
    return int(env) if env else DEFAULT_NODE_BUDGET


# -- policies ------------------------------------------------------------------

_STEP = re.compile(r"\(([^(),]+),([^(),]+),([^(),]+)\)")


@dataclass(eq=False)
class PolicyTree:
    """Per-node mixed decision rules indexed by the (a, b, x') path from the root.

    ``table[path] = (zeta, eta)`` with full-length vectors over A and B.
    """

    x0: int
    horizon: int
    table: dict = field(default_factory=dict)

    def path(self, h) -> tuple:
        h = tuple(h)
        if not h or h[0] != self.x0:
            raise PolicyUndefined(f"history does not start at x0={self.x0}")
        return tuple(zip(h[1::3], h[2::3], h[3::3]))

    def lookup(self, h):
        try:
            return self.table[self.path(h)]
        except KeyError:
            raise PolicyUndefined(f"policy undefined at history {tuple(h)}") from None

    def pi(self, h) -> np.ndarray:
        return self.lookup(h)[0]

    def sigma(self, h) -> np.ndarray:
        return self.lookup(h)[1]

    def __eq__(self, other):
        if not isinstance(other, PolicyTree):
            return NotImplemented
        if (self.x0, self.horizon) != (other.x0, other.horizon) or self.table.keys() != other.table.keys():
            return False
        return all(np.array_equal(z1, z2) and np.array_equal(e1, e2)
                   for (z1, e1), (z2, e2) in ((self.table[k], other.table[k]) for k in self.table))

    def to_json(self, spec: GameSpec) -> dict:
        out = {}
        for path in sorted(self.table):
            zeta, eta = self.table[path]
            x = path[-1][2] if path else self.x0
            key = "".join(f"({spec.actions_p1[a]},{spec.actions_p2[b]},{spec.observable_states[xn]})"
                          for a, b, xn in path)
            out[key] = {
                "p1": {spec.actions_p1[a]: float(zeta[a]) for a in spec.actions1(x)},
                "p2": {spec.actions_p2[b]: float(eta[b]) for b in spec.actions2(x)},
            }
        return out

    @classmethod
    def from_json(cls, spec: GameSpec, doc, x0: int, horizon: int) -> "PolicyTree":
        if not isinstance(doc, dict):
            raise ModelFormatError("policy", "expected a map from path to decision rules")
        nx, _, na, nb = spec.shape
        table = {}
        for key, rule in doc.items():
            steps = _STEP.findall(key)
            if "".join(f"({a},{b},{x})" for a, b, x in steps) != key:
                raise ModelFormatError(f"policy[{key!r}]", "malformed path key")
            path = tuple((spec.index("a", a), spec.index("b", b), spec.index("x", x)) for a, b, x in steps)
            if not isinstance(rule, dict) or set(rule) != {"p1", "p2"}:
                raise ModelFormatError(f"policy[{key!r}]", "expected fields 'p1' and 'p2'")
            zeta, eta = np.zeros(na), np.zeros(nb)
            for vec, kind, name in ((zeta, "a", "p1"), (eta, "b", "p2")):
                if not isinstance(rule[name], dict):
                    raise ModelFormatError(f"policy[{key!r}].{name}", "expected a map")
                for act, p in rule[name].items():
                    vec[spec.index(kind, act)] = float(p)
            table[path] = (zeta, eta)
        return cls(x0, horizon, table)


def _rule(policy, h, adm, who) -> np.ndarray:
    try:
        vec = np.asarray(policy(h), dtype=float)
    except PolicyUndefined:
        raise
    except (KeyError, IndexError) as exc:
        raise PolicyUndefined(f"{who} policy undefined at history {h}") from exc
    if vec.shape != adm.shape or np.any(vec[~adm.astype(bool)] != 0) or np.any(vec < 0):
        raise PolicyUndefined(f"{who} policy returned an invalid mixed action at history {h}")
    return vec


# -- results -------------------------------------------------------------------

@dataclass(eq=False)
class SolveResult:
    x0: int
    value: float | None = None
    bracket: tuple | None = None
    depth: int = 0
    nodes: int = 0
    policy: PolicyTree | None = None
    bound_type: str | None = None
    tail_bound: float | None = None
    suboptimality: float | None = None
    backups: dict | None = None
    wall_time: float = 0.0
    evaluations: int = 0

    def _fields(self):
        return (self.x0, self.value, self.bracket, self.depth, self.nodes, self.policy,
                self.bound_type, self.tail_bound, self.suboptimality,
                None if self.backups is None else {k: list(v) for k, v in self.backups.items()})

    def __eq__(self, other):
        if not isinstance(other, SolveResult):
            return NotImplemented
        return self._fields() == other._fields()

    def to_json(self, spec: GameSpec) -> dict:
        doc = {"x0": spec.observable_states[self.x0], "depth": self.depth, "nodes": self.nodes}
        if self.value is not None:
            doc["value"] = self.value
        if self.bracket is not None:
            doc["bracket"] = list(self.bracket)
        if self.policy is not None:
            doc["policy"] = self.policy.to_json(spec)
        for name in ("bound_type", "tail_bound", "suboptimality"):
            if getattr(self, name) is not None:
                doc[name] = getattr(self, name)
        if self.backups is not None:
            doc["backups"] = {k: list(v) for k, v in self.backups.items()}
        return doc

    @classmethod
    def from_json(cls, spec: GameSpec, doc) -> "SolveResult":
        x0 = spec.index("x", doc["x0"])
        depth = int(doc["depth"])
        policy = PolicyTree.from_json(spec, doc["policy"], x0, depth) if "policy" in doc else None
        return cls(
            x0=x0, value=doc.get("value"),
            bracket=tuple(doc["bracket"]) if "bracket" in doc else None,
            depth=depth, nodes=int(doc["nodes"]), policy=policy,
            bound_type=doc.get("bound_type"), tail_bound=doc.get("tail_bound"),
            suboptimality=doc.get("suboptimality"),
            backups={k: list(v) for k, v in doc["backups"].items()} if "backups" in doc else None,
        )


@dataclass(eq=False)
class BeliefTreeNode:
    state: AugmentedState
    depth: int
    children: dict = field(default_factory=dict)
    payoff_matrix: np.ndarray | None = None
    node_solution: MatrixGameSolution | None = None
    value: float = 0.0


# -- operators -----------------------------------------------------------------

def v0_terminal(mu: Belief, utility: Utility) -> float:
    return float(np.dot(mu.w, utility(mu.s)))


def _qrow(spec, x, mu, a, b):
    return mu.w @ spec.qx[x, mu.y, a, b, :]


def payoff_matrix(spec: GameSpec, state: AugmentedState, v_next, merge_tol=MERGE_TOL) -> np.ndarray:
    """M(a, b) = sum_x' v_next(x', Phi(x, a, b, x', mu, z), beta z) Q^X(x' | x, mu^Y, a, b).

    Rows/columns follow the admissible actions at ``state.x`` in index order.
    """
    x, mu, z = state.x, state.mu, state.z
    A, B = spec.actions1(x), spec.actions2(x)
    ymarg = mu.y_marginal(spec.shape[1])
    M = np.zeros((A.shape[0], B.shape[0]))
    for ia, a in enumerate(A):
        for ib, b in enumerate(B):
            qrow = q_x_under_belief(spec, x, ymarg, a, b)
            for xn in np.flatnonzero(qrow > 0):
                child = phi_update(spec, x, a, b, xn, mu, z, merge_tol)
                M[ia, ib] += qrow[xn] * v_next(int(xn), child, spec.discount * z)
    return M


def bellman_T(spec: GameSpec, state: AugmentedState, v_next, merge_tol=MERGE_TOL):
    """(value, zeta*, eta*) of the minimax Bellman operator at one state."""
    M = payoff_matrix(spec, state, v_next, merge_tol)
    sol = solve_matrix_game(M)
    return sol.value, _full(sol.row_strategy, spec.actions1(state.x), spec.shape[2]), \
        _full(sol.col_strategy, spec.actions2(state.x), spec.shape[3])


def _full(vec, idx, n) -> np.ndarray:
    out = np.zeros(n)
    out[idx] = vec
    return out


def bound_upper(mu: Belief, z, spec: GameSpec) -> float:
    return float(np.dot(mu.w, spec.utility(mu.s + z * spec.cost_upper / (1.0 - spec.discount))))


def bound_lower(mu: Belief, z, spec: GameSpec) -> float:
    return float(np.dot(mu.w, spec.utility(mu.s + z * spec.cost_lower / (1.0 - spec.discount))))


def bound_kind(utility: Utility) -> str:
    return {"concave": "epsilon_concave", "convex": "delta_convex", "both": "sandwich"}[utility.shape]


def tail_bound(spec: GameSpec, n, z, mu: Belief) -> float:
    """Upper bound on V_inf - T^n V_0 (and on the sandwich gap) at (mu, z).

    Concave/linear U: beta^n (z cbar / (1-beta)) U'_-(z c_low).
    Convex U: beta^n (z cbar / (1-beta)) * sum w U'_+(s + z cbar / (1-beta)).
    """
    beta, U = spec.discount, spec.utility
    reach = z * spec.cost_upper / (1.0 - beta)
    if U.shape in ("concave", "both"):
        slope = U.dleft(z * spec.cost_lower)
    else:
        slope = float(np.dot(mu.w, U.dright(mu.s + reach)))
    return beta ** n * reach * slope


# -- finite horizon ------------------------------------------------------------

def solve_finite(spec: GameSpec, x0: int, N: int, *, merge_tol=MERGE_TOL, memo=True,
                 node_budget=None) -> SolveResult:
    """N-stage value V_N(x0, Q0 x delta_0, 1) with per-node saddle strategies."""
    require_valid(spec)
    if N < 0:
        raise ValueError("horizon must be >= 0")
    t0 = time.perf_counter()
    budget = node_budget_default() if node_budget is None else node_budget
    zs = spec.discount_powers(N)
    U = spec.utility
    cache = {}
    evaluations = [0]

    def solve(x, mu, d):
        key = (x, mu.key(), d)
        if memo and key in cache:
            return cache[key]
        evaluations[0] += 1
        if evaluations[0] > budget:
            raise NodeBudgetExceeded(f"node budget {budget} exceeded at depth {d}",
                                     nodes=evaluations[0])
        node = BeliefTreeNode(AugmentedState(x, mu, zs[d]), d)
        rem = N - d
        if rem == 0:
            node.value = v0_terminal(mu, U)
        else:
            A, B = spec.actions1(x), spec.actions2(x)
            if rem == 1:
                M = core.terminal_payoffs(spec.cost, spec.admissible_p1, spec.admissible_p2,
                                          U.code, U.param, spec.discount, [0.0],
                                          x, mu.y, mu.s, mu.w, zs[d])[0]
            else:
                M = np.zeros((A.shape[0], B.shape[0]))
                for ia, a in enumerate(A):
                    for ib, b in enumerate(B):
                        qrow = _qrow(spec, x, mu, a, b)
                        for xn in np.flatnonzero(qrow > 0):
                            xn = int(xn)
                            child = solve(xn, phi_update(spec, x, a, b, xn, mu, zs[d], merge_tol), d + 1)
                            node.children[(int(a), int(b), xn)] = child
                            M[ia, ib] += qrow[xn] * child.value
            node.payoff_matrix = M
            node.node_solution = solve_matrix_game(M)
            node.value = node.node_solution.value
        if memo:
            cache[key] = node
        return node

    root = solve(x0, initial_belief(spec), 0)
    policy = PolicyTree(x0, N)
    na, nb = spec.shape[2], spec.shape[3]

    def collect(node, path):
        sol = node.node_solution
        if sol is None:
            return
        x = node.state.x
        policy.table[path] = (_full(sol.row_strategy, spec.actions1(x), na),
                              _full(sol.col_strategy, spec.actions2(x), nb))
        for step in sorted(node.children):
            collect(node.children[step], path + (step,))

    collect(root, ())
    return SolveResult(x0=x0, value=root.value, depth=N, nodes=len(policy.table), policy=policy,
                       wall_time=time.perf_counter() - t0, evaluations=evaluations[0])


def evaluate_policy_pair(spec: GameSpec, x0: int, pi, sigma, N: int, *, merge_tol=MERGE_TOL) -> float:
    """Expected utility of a fixed policy pair via backward composition of T_fg.

    ``pi``/``sigma`` map a flat observable history (x0, a0, b0, x1, ...) to a
    full-length mixed action; a :class:`PolicyTree` provides ``.pi``/``.sigma``.
    """
    require_valid(spec)
    if isinstance(pi, PolicyTree):
        pi = pi.pi
    if isinstance(sigma, PolicyTree):
        sigma = sigma.sigma
    zs = spec.discount_powers(N)
    U = spec.utility

    def value(x, mu, d, h):
        if d == N:
            return v0_terminal(mu, U)
        zeta = _rule(pi, h, spec.admissible_p1[x], "player 1")
        eta = _rule(sigma, h, spec.admissible_p2[x], "player 2")
        total = 0.0
        for a in np.flatnonzero(zeta > 0):
            for b in np.flatnonzero(eta > 0):
                qrow = _qrow(spec, x, mu, a, b)
                inner = 0.0
                for xn in np.flatnonzero(qrow > 0):
                    child = phi_update(spec, x, a, b, xn, mu, zs[d], merge_tol)
                    inner += qrow[xn] * value(int(xn), child, d + 1, h + (int(a), int(b), int(xn)))
                total += zeta[a] * eta[b] * inner
        return total

    return float(value(x0, initial_belief(spec), 0, (x0,)))


# -- infinite horizon ----------------------------------------------------------

def required_depth(spec: GameSpec, tol: float, max_depth: int = 10_000) -> int:
    """Smallest n >= 1 whose tail bound at the root is <= tol.

    The tail term assumes one stage of cost has been paid, so n = 0 is never
    certified.
    """
    mu0 = initial_belief(spec)
    for n in range(1, max_depth + 1):
        if tail_bound(spec, n, 1.0, mu0) <= tol:
            return n
    raise ValueError(f"tolerance {tol} not reachable within depth {max_depth}")


def tree_size_bound(spec: GameSpec, depth: int) -> int:
    """Upper bound on kernel node visits for a depth-``depth`` bracket computation."""
    nx = spec.shape[0]
    branch = max(int(spec.admissible_p1[x].sum() * spec.admissible_p2[x].sum()) * nx for x in range(nx))
    return sum(branch ** d for d in range(max(depth, 1)))


def _child_values(args):
    (cost, kernel, qx, adm1, adm2, beta, ukind, uparam, consts,
     x, y, s, w, z, H, tol, budget, backend_name) = args
    from pogs import _kernels
    backend = next(m for m in _kernels.backends() if m.NAME == backend_name)
    return backend.horizon_values(cost, kernel, qx, adm1, adm2, beta, ukind, uparam, consts,
                                  x, y, s, w, z, H, tol, budget)


def solve_infinite(spec: GameSpec, x0: int, tol: float, *, merge_tol=MERGE_TOL, node_budget=None,
                   workers: int = 1, backend=None) -> SolveResult:
    """Bracket [T^n a_low, T^n a_up] around V_inf(x0, Q0 x delta_0, 1) with width <= tol.

    The three backups (terminal V_0, lower and upper envelopes) share one tree
    expansion. Root strategies come from the T^n V_0 root matrix game.
    """
    require_valid(spec)
    if not tol > 0:
        raise ValueError("tol must be positive")
    shape = spec.utility.shape
    t0 = time.perf_counter()
    budget = node_budget_default() if node_budget is None else node_budget
    backend = backend or core
    n = required_depth(spec, tol)
    if tree_size_bound(spec, n) > budget:
        ok = 0
        while tree_size_bound(spec, ok + 1) <= budget:
            ok += 1
        achievable = tail_bound(spec, ok, 1.0, initial_belief(spec))
        raise NodeBudgetExceeded(
            f"depth {n} needed for tol={tol:g} exceeds node budget {budget}; "
            f"achievable tolerance {achievable:.6g} at depth {ok}",
            nodes=tree_size_bound(spec, n), achievable=achievable)

    beta, U = spec.discount, spec.utility
    consts = np.array([0.0, spec.cost_lower / (1.0 - beta), spec.cost_upper / (1.0 - beta)])
    mu0 = initial_belief(spec)
    leaf = U(mu0.s[None, :] + consts[:, None]) @ mu0.w
    values = np.empty((n + 1, 3))
    values[0] = leaf
    policy = PolicyTree(x0, n)
    suboptimality = None
    nodes = 1
    if n > 0:
        A, B = spec.actions1(x0), spec.actions2(x0)
        tasks, slots = [], []
        for ia, a in enumerate(A):
            for ib, b in enumerate(B):
                qrow = _qrow(spec, x0, mu0, a, b)
                for xn in np.flatnonzero(qrow > 0):
                    child = phi_update(spec, x0, a, b, xn, mu0, 1.0, merge_tol)
                    tasks.append((spec.cost, spec.kernel, spec.qx, spec.admissible_p1,
                                  spec.admissible_p2, beta, U.code, U.param, consts, int(xn),
                                  child.y, child.s, child.w, beta, n - 1, merge_tol, budget,
                                  backend.NAME))
                    slots.append((ia, ib, qrow[xn]))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_child_values, tasks))
        else:
            results = [_child_values(t) for t in tasks]
        M = np.zeros((n, 3, A.shape[0], B.shape[0]))
        for (ia, ib, q), (vals, count) in zip(slots, results):
            M[:, :, ia, ib] += q * vals
            nodes += count
        for h in range(1, n + 1):
            for j in range(3):
                values[h, j] = backend.solve_game(M[h - 1, j])[0]
        root = solve_matrix_game(M[n - 1, 0], backend=backend)
        policy.table[()] = (_full(root.row_strategy, A, spec.shape[2]),
                            _full(root.col_strategy, B, spec.shape[3]))
        suboptimality = float((M[n - 1, 2] - M[n - 1, 0]).max())
    tail = tail_bound(spec, n, 1.0, mu0)
    return SolveResult(
        x0=x0, bracket=(float(values[n, 1]), float(values[n, 2])), depth=n, nodes=nodes,
        policy=policy, bound_type=bound_kind(U), tail_bound=float(tail),
        suboptimality=suboptimality,
        backups={"v0": values[:, 0].tolist(), "lower": values[:, 1].tolist(),
                 "upper": values[:, 2].tolist()},
        wall_time=time.perf_counter() - t0, evaluations=nodes,
    )
