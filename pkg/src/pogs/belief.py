"""Joint beliefs over (hidden state, accumulated discounted cost).

A belief is a finitely supported probability measure on Y x R+, stored as
parallel arrays of atoms ``(y, s, w)`` in canonical order. With finite Y and a
deterministic stage cost the Bayes update maps such measures to such measures,
so filtering is exact up to the optional merging of nearly equal cost values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pogs._kernels import core
from pogs.errors import ImpossibleObservation
from pogs.model import GameSpec, History

MERGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Belief:
    y: np.ndarray
    s: np.ndarray
    w: np.ndarray
    canonical: bool = True
    _key: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        s = np.ascontiguousarray(self.s, dtype=float)
        w = np.ascontiguousarray(self.w, dtype=float)
        if not (y.shape == s.shape == w.shape and y.ndim == 1):
            raise ValueError("atom arrays must be 1-D and of equal length")
        for name, arr in (("y", y), ("s", s), ("w", w)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_key", y.tobytes() + s.tobytes() + w.tobytes())

    @classmethod
    def from_atoms(cls, atoms, merge_tol=MERGE_TOL) -> "Belief":
        atoms = list(atoms)
        y = np.array([a[0] for a in atoms], dtype=np.int64)
        s = np.array([a[1] for a in atoms], dtype=float)
        w = np.array([a[2] for a in atoms], dtype=float)
        return canonicalize(cls(y, s, w, canonical=False), merge_tol)

    def __len__(self):
        return self.w.shape[0]

    def __eq__(self, other):
        return isinstance(other, Belief) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def key(self) -> bytes:
        """Exact byte key of the atom arrays (used for memoization)."""
        return self._key

    def atoms(self) -> list[tuple[int, float, float]]:
        return [(int(a), float(b), float(c)) for a, b, c in zip(self.y, self.s, self.w)]

    def y_marginal(self, ny) -> np.ndarray:
        return np.bincount(self.y, weights=self.w, minlength=ny)

    def s_marginal(self) -> list[tuple[float, float]]:
        vals, inv = np.unique(self.s, return_inverse=True)
        weights = np.bincount(inv.ravel(), weights=self.w, minlength=vals.shape[0])
        return [(float(v), float(p)) for v, p in zip(vals, weights)]

    def max_cost(self) -> float:
        return float(self.s.max()) if len(self) else 0.0

    def to_json(self, spec: GameSpec) -> list[dict]:
        return [{"y": spec.hidden_states[y], "s": s, "w": w} for y, s, w in self.atoms()]


@dataclass(frozen=True)
class AugmentedState:
    """State (x, mu, z) of the completely observable game."""

    x: int
    mu: Belief
    z: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.z <= 1.0):
            raise ValueError("z must lie in (0, 1]")


def initial_belief(spec: GameSpec) -> Belief:
    q0 = spec.initial_hidden
    ys = np.flatnonzero(q0 > 0)
    return Belief(ys, np.zeros(ys.shape[0]), q0[ys])


def canonicalize(mu: Belief, merge_tol=MERGE_TOL) -> Belief:
    y, s, w = core.canonicalize(mu.y, mu.s, mu.w, merge_tol)
    return Belief(y, s, w)


def phi_update(spec: GameSpec, x, a, b, x_next, mu: Belief, z, merge_tol=MERGE_TOL) -> Belief:
    """Posterior over (y', s') after actions (a, b) at x and observation x_next.

    Each atom (y, s, w) spreads to (y', s + z C(x, y, a, b)) with weight
    proportional to w q(x_next, y' | x, y, a, b).
    """
    spec.require_admissible(x, a, b)
    y, s, w, denom = core.phi_update(spec.cost, spec.kernel, spec.qx, mu.y, mu.s, mu.w,
                                     int(x), int(a), int(b), int(x_next), float(z), merge_tol)
    if not denom > 0.0:
        raise ImpossibleObservation(
            f"impossible observation: x'={spec.observable_states[x_next]} has zero probability")
    return Belief(y, s, w)


def y_marginal(mu: Belief, ny) -> np.ndarray:
    return mu.y_marginal(ny)


def s_marginal(mu: Belief) -> list[tuple[float, float]]:
    return mu.s_marginal()


def filter(spec: GameSpec, history: History, merge_tol=MERGE_TOL) -> list[Belief]:
    """Beliefs mu_0, ..., mu_n along an observable history (z = beta**k at step k)."""
    history.check(spec)
    out = [initial_belief(spec)]
    z = 1.0
    for k, (a, b) in enumerate(history.actions):
        try:
            out.append(phi_update(spec, history.states[k], a, b, history.states[k + 1],
                                  out[-1], z, merge_tol))
        except ImpossibleObservation as exc:
            raise ImpossibleObservation(str(exc), step=k) from None
        z *= spec.discount
    return out


def filter_all(spec: GameSpec, x0, depth, merge_tol=MERGE_TOL) -> dict:
    """Beliefs for every positive-probability history of length <= depth.

    Keys are (a, b, x') step tuples from x0; prefixes are shared, so each
    belief is produced by exactly the update sequence ``filter`` would apply.
    """
    nx = spec.shape[0]
    out = {(): initial_belief(spec)}
    frontier = [((), int(x0))]
    z = 1.0
    for _ in range(depth):
        nxt = []
        for path, x in frontier:
            mu = out[path]
            for a in spec.actions1(x):
                for b in spec.actions2(x):
                    qrow = mu.w @ spec.qx[x, mu.y, a, b, :]
                    for xn in range(nx):
                        if qrow[xn] > 0.0:
                            step = path + ((int(a), int(b), xn),)
                            out[step] = phi_update(spec, x, a, b, xn, mu, z, merge_tol)
                            nxt.append((step, xn))
        frontier = nxt
        z *= spec.discount
    return out
