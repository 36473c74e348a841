"""Finite game model: tables, utility family, kernel marginals, JSON I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from pogs.errors import InadmissibleAction, InvalidModel, ModelFormatError

STOCHASTIC_TOL = 1e-12

UTILITY_KINDS = ("linear", "exponential", "power", "log1p")
_KIND_CODES = {k: i for i, k in enumerate(UTILITY_KINDS)}
_PARAM_NAME = {"exponential": "theta", "power": "gamma"}


@dataclass(frozen=True)
class Utility:
    """Strictly increasing utility applied to the accumulated discounted cost.

    ``linear``: U(s) = s; ``exponential``: U(s) = exp(theta*s)/theta (theta != 0);
    ``power``: U(s) = s**gamma (gamma > 0); ``log1p``: U(s) = log(1 + s).
    """

    kind: str = "linear"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        p = float(self.param)
        object.__setattr__(self, "param", p)
        if self.kind == "exponential" and (p == 0.0 or not math.isfinite(p)):
            raise ValueError("exponential utility needs finite theta != 0")
        if self.kind == "power" and not (p > 0.0 and math.isfinite(p)):
            raise ValueError("power utility needs finite gamma > 0")

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def exponential(cls, theta):
        return cls("exponential", theta)

    @classmethod
    def power(cls, gamma):
        return cls("power", gamma)

    @classmethod
    def log1p(cls):
        return cls("log1p")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def shape(self) -> str:
        if self.kind == "linear":
            return "both"
        if self.kind == "exponential":
            return "convex" if self.param > 0 else "concave"
        if self.kind == "power":
            if self.param == 1.0:
                return "both"
            return "convex" if self.param > 1.0 else "concave"
        return "concave"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "linear":
            out = s * 1.0
        elif self.kind == "exponential":
            out = np.exp(self.param * s) / self.param
        elif self.kind == "power":
            out = np.power(s, self.param)
        else:
            out = np.log1p(s)
        return out if out.ndim else float(out)

    def _derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "linear":
            out = np.ones_like(s)
        elif self.kind == "exponential":
            out = np.exp(self.param * s)
        elif self.kind == "power":
            g = self.param
            if g == 1.0:
                out = np.ones_like(s)
            else:
                with np.errstate(divide="ignore"):
                    out = np.where(s > 0, g * np.power(np.where(s > 0, s, 1.0), g - 1.0),
                                   math.inf if g < 1.0 else 0.0)
        else:
            out = 1.0 / (1.0 + s)
        return out if out.ndim else float(out)

    def dleft(self, s):
        """Left derivative; +inf for power gamma < 1 at s = 0."""
        return self._derivative(s)

    def dright(self, s):
        return self._derivative(s)

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in _PARAM_NAME:
            d[_PARAM_NAME[self.kind]] = self.param
        return d

    @classmethod
    def from_json(cls, d) -> "Utility":
        if not isinstance(d, dict) or "kind" not in d:
            raise ModelFormatError("utility", "expected an object with a 'kind' field")
        kind = d["kind"]
        if kind not in UTILITY_KINDS:
            raise ModelFormatError("utility.kind", f"unknown kind {kind!r}")
        allowed = {"kind"} | ({_PARAM_NAME[kind]} if kind in _PARAM_NAME else set())
        extra = set(d) - allowed
        if extra:
            raise ModelFormatError("utility", f"unknown fields {sorted(extra)}")
        if kind in _PARAM_NAME:
            name = _PARAM_NAME[kind]
            if name not in d:
                raise ModelFormatError(f"utility.{name}", "missing")
            try:
                return cls(kind, float(d[name]))
            except (TypeError, ValueError) as exc:
                raise ModelFormatError(f"utility.{name}", str(exc)) from None
        return cls(kind)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Finite partially observable zero-sum game.

    Tables are index-addressed: ``cost[x, y, a, b]`` and
    ``kernel[x, y, a, b, x', y']``. Entries at inadmissible ``(x, a, b)`` are
    never read. Construction only checks shapes; use :func:`validate` for the
    model invariants.
    """

    observable_states: tuple
    hidden_states: tuple
    actions_p1: tuple
    actions_p2: tuple
    admissible_p1: np.ndarray
    admissible_p2: np.ndarray
    cost: np.ndarray
    kernel: np.ndarray
    initial_hidden: np.ndarray
    discount: float
    utility: Utility = Utility()
    qx: np.ndarray = field(init=False, repr=False)
    cost_lower: float = field(init=False)
    cost_upper: float = field(init=False)

    def __post_init__(self):
        put = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        for name in ("observable_states", "hidden_states", "actions_p1", "actions_p2"):
            put(name, tuple(str(v) for v in getattr(self, name)))
        nx, ny, na, nb = self.shape
        adm1 = np.array(self.admissible_p1, dtype=np.uint8).reshape(nx, na)
        adm2 = np.array(self.admissible_p2, dtype=np.uint8).reshape(nx, nb)
        cost = np.ascontiguousarray(self.cost, dtype=float).reshape(nx, ny, na, nb)
        kernel = np.ascontiguousarray(self.kernel, dtype=float).reshape(nx, ny, na, nb, nx, ny)
        q0 = np.ascontiguousarray(self.initial_hidden, dtype=float).reshape(ny)
        qx = np.ascontiguousarray(kernel.sum(axis=5))
        for name, arr in (("admissible_p1", adm1), ("admissible_p2", adm2), ("cost", cost),
                          ("kernel", kernel), ("initial_hidden", q0), ("qx", qx)):
            arr.flags.writeable = False
            put(name, arr)
        put("discount", float(self.discount))
        mask = self.admissible_mask()
        vals = cost.transpose(0, 2, 3, 1)[mask]
        if vals.size:
            put("cost_lower", float(vals.min()))
            put("cost_upper", float(vals.max()))
        else:
            put("cost_lower", math.nan)
            put("cost_upper", math.nan)

    @property
    def shape(self):
        return (len(self.observable_states), len(self.hidden_states),
                len(self.actions_p1), len(self.actions_p2))

    @property
    def beta(self) -> float:
        return self.discount

    def admissible_mask(self) -> np.ndarray:
        """Boolean (nx, na, nb) mask of admissible (x, a, b)."""
        return (self.admissible_p1[:, :, None] & self.admissible_p2[:, None, :]).astype(bool)

    def actions1(self, x) -> np.ndarray:
        return np.flatnonzero(self.admissible_p1[x])

    def actions2(self, x) -> np.ndarray:
        return np.flatnonzero(self.admissible_p2[x])

    def is_admissible(self, x, a, b) -> bool:
        nx, _, na, nb = self.shape
        return (0 <= x < nx and 0 <= a < na and 0 <= b < nb
                and bool(self.admissible_p1[x, a]) and bool(self.admissible_p2[x, b]))

    def require_admissible(self, x, a, b):
        if not self.is_admissible(x, a, b):
            raise InadmissibleAction(f"inadmissible action (x={x}, a={a}, b={b})")

    def discount_powers(self, n) -> list[float]:
        """[1, beta, beta*beta, ...] by repeated multiplication (length n + 1)."""
        out = [1.0]
        for _ in range(n):
            out.append(out[-1] * self.discount)
        return out

    def replace(self, **changes) -> "GameSpec":
        kw = {k: getattr(self, k) for k in (
            "observable_states", "hidden_states", "actions_p1", "actions_p2",
            "admissible_p1", "admissible_p2", "cost", "kernel", "initial_hidden",
            "discount", "utility")}
        kw.update(changes)
        return GameSpec(**kw)

    def index(self, kind, ident) -> int:
        table = {"x": self.observable_states, "y": self.hidden_states,
                 "a": self.actions_p1, "b": self.actions_p2}[kind]
        try:
            return table.index(str(ident))
        except ValueError:
            raise ModelFormatError(kind, f"unknown identifier {ident!r}") from None


def validate(spec: GameSpec) -> list[str]:
    """Return the list of invariant violations; empty means the model is usable."""
    report = []
    beta = spec.discount
    if not (0.0 < beta < 1.0):
        report.append(f"discount must lie in (0,1), got {beta!r}")
    for x, name in enumerate(spec.observable_states):
        if not spec.admissible_p1[x].any():
            report.append(f"admissible set empty: A({name})")
        if not spec.admissible_p2[x].any():
            report.append(f"admissible set empty: B({name})")
    for tag, ids in (("observable", spec.observable_states), ("hidden", spec.hidden_states),
                     ("action", spec.actions_p1 + spec.actions_p2)):
        if not ids:
            report.append(f"no {tag} identifiers")
        if any("," in i for i in ids):
            report.append(f"{tag} identifiers must not contain ','")
    mask = spec.admissible_mask()
    cost = spec.cost.transpose(0, 2, 3, 1)[mask]
    if not np.all(np.isfinite(cost)):
        report.append("cost must be finite")
    if np.any(cost <= 0.0):
        report.append("cost must be strictly positive")
    rows = spec.kernel.transpose(0, 2, 3, 1, 4, 5)[mask]
    if not np.all(np.isfinite(rows)):
        report.append("kernel entries must be finite")
    elif np.any(rows < 0.0):
        report.append("kernel has negative entries")
    sums = rows.reshape(rows.shape[0], rows.shape[1], -1).sum(axis=2) if rows.size else rows
    if rows.size and np.any(np.abs(sums - 1.0) > STOCHASTIC_TOL):
        report.append("kernel row not stochastic")
    q0 = spec.initial_hidden
    if not np.all(np.isfinite(q0)) or np.any(q0 < 0) or abs(q0.sum() - 1.0) > STOCHASTIC_TOL:
        report.append("initial_hidden not a probability vector")
    return report


def require_valid(spec: GameSpec) -> GameSpec:
    report = validate(spec)
    if report:
        raise InvalidModel(report)
    return spec


def q_marginal_x(spec: GameSpec, x, y, a, b) -> np.ndarray:
    """Marginal law of the next observable state given (x, y, a, b)."""
    spec.require_admissible(x, a, b)
    return spec.kernel[x, y, a, b].sum(axis=1)


def q_x_under_belief(spec: GameSpec, x, y_dist, a, b) -> np.ndarray:
    """Law of the next observable state when the hidden state is distributed as ``y_dist``."""
    spec.require_admissible(x, a, b)
    y_dist = np.asarray(y_dist, dtype=float)
    return y_dist @ spec.qx[x, :, a, b, :]


@dataclass(frozen=True)
class History:
    """Observable history x0, (a0, b0), x1, ..., x_n as index tuples."""

    states: tuple
    actions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(v) for v in self.states))
        object.__setattr__(self, "actions", tuple((int(a), int(b)) for a, b in self.actions))
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("history must start and end with an observable state")

    def __len__(self):
        return len(self.actions)

    @property
    def flat(self) -> tuple:
        out = [self.states[0]]
        for (a, b), x in zip(self.actions, self.states[1:]):
            out += [a, b, x]
        return tuple(out)

    @classmethod
    def from_flat(cls, flat) -> "History":
        flat = tuple(flat)
        return cls(flat[0::3], tuple(zip(flat[1::3], flat[2::3])))

    def check(self, spec: GameSpec):
        for k, (a, b) in enumerate(self.actions):
            if not spec.is_admissible(self.states[k], a, b):
                raise InadmissibleAction(f"inadmissible action at step {k}")

    def to_json(self, spec: GameSpec) -> list:
        out = [{"x": spec.observable_states[self.states[0]]}]
        for (a, b), x in zip(self.actions, self.states[1:]):
            out.append({"a": spec.actions_p1[a], "b": spec.actions_p2[b]})
            out.append({"x": spec.observable_states[x]})
        return out

    @classmethod
    def from_json(cls, spec: GameSpec, doc) -> "History":
        if not isinstance(doc, list) or not doc or len(doc) % 2 != 1:
            raise ModelFormatError("history", "expected an odd-length list alternating states and action pairs")
        states, actions = [], []
        for i, item in enumerate(doc):
            if not isinstance(item, dict):
                raise ModelFormatError(f"history[{i}]", "expected an object")
            if i % 2 == 0:
                if set(item) != {"x"}:
                    raise ModelFormatError(f"history[{i}]", "state entries need exactly the field 'x'")
                states.append(spec.index("x", item["x"]))
            else:
                if set(item) != {"a", "b"}:
                    raise ModelFormatError(f"history[{i}]", "action entries need exactly the fields 'a', 'b'")
                actions.append((spec.index("a", item["a"]), spec.index("b", item["b"])))
        return cls(tuple(states), tuple(actions))


def check_mixed_action(vec, admissible, tol=STOCHASTIC_TOL) -> bool:
    vec = np.asarray(vec, dtype=float)
    adm = np.asarray(admissible, dtype=bool)
    return bool(np.all(vec >= 0) and abs(vec.sum() - 1.0) <= tol and np.all(vec[~adm] == 0))


# -- JSON model files --------------------------------------------------------

MODEL_FIELDS = ("beta", "observable_states", "hidden_states", "actions_p1", "actions_p2",
                "admissible_p1", "admissible_p2", "cost", "kernel", "initial_hidden", "utility")


def _id_list(doc, name):
    v = doc[name]
    if not isinstance(v, list) or not all(isinstance(i, str) for i in v):
        raise ModelFormatError(name, "expected a list of strings")
    if len(set(v)) != len(v):
        raise ModelFormatError(name, "duplicate identifiers")
    return v


def _number(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFormatError(name, "expected a number")
    return float(v)


def model_from_dict(doc) -> GameSpec:
    if not isinstance(doc, dict):
        raise ModelFormatError("model", "expected a JSON object")
    extra = set(doc) - set(MODEL_FIELDS)
    if extra:
        raise ModelFormatError(sorted(extra)[0], "unknown field")
    for name in MODEL_FIELDS:
        if name not in doc:
            raise ModelFormatError(name, "missing field")
    X = _id_list(doc, "observable_states")
    Y = _id_list(doc, "hidden_states")
    A = _id_list(doc, "actions_p1")
    B = _id_list(doc, "actions_p2")
    nx, ny, na, nb = len(X), len(Y), len(A), len(B)
    ix = {k: i for i, k in enumerate(X)}
    iy = {k: i for i, k in enumerate(Y)}
    ia = {k: i for i, k in enumerate(A)}
    ib = {k: i for i, k in enumerate(B)}

    def adm(name, ids, index, n):
        table = doc[name]
        if not isinstance(table, dict):
            raise ModelFormatError(name, "expected a map from observable state to action list")
        out = np.zeros((nx, n), dtype=np.uint8)
        for xk, acts in table.items():
            if xk not in ix:
                raise ModelFormatError(f"{name}.{xk}", "unknown observable state")
            if not isinstance(acts, list):
                raise ModelFormatError(f"{name}.{xk}", "expected a list")
            for act in acts:
                if act not in index:
                    raise ModelFormatError(f"{name}.{xk}", f"unknown action {act!r}")
                out[ix[xk], index[act]] = 1
        return out

    adm1 = adm("admissible_p1", A, ia, na)
    adm2 = adm("admissible_p2", B, ib, nb)

    def split_key(key, name, parts, maps):
        items = key.split(",")
        if len(items) != parts:
            raise ModelFormatError(f"{name}[{key!r}]", f"key must have {parts} comma-separated ids")
        try:
            return tuple(m[i] for m, i in zip(maps, items))
        except KeyError as exc:
            raise ModelFormatError(f"{name}[{key!r}]", f"unknown identifier {exc.args[0]!r}") from None

    cost = np.full((nx, ny, na, nb), np.nan)
    if not isinstance(doc["cost"], dict):
        raise ModelFormatError("cost", "expected a map")
    for key, val in doc["cost"].items():
        idx = split_key(key, "cost", 4, (ix, iy, ia, ib))
        cost[idx] = _number(val, f"cost[{key!r}]")
    kernel = np.zeros((nx, ny, na, nb, nx, ny))
    if not isinstance(doc["kernel"], dict):
        raise ModelFormatError("kernel", "expected a map")
    for key, row in doc["kernel"].items():
        idx = split_key(key, "kernel", 4, (ix, iy, ia, ib))
        if not isinstance(row, dict):
            raise ModelFormatError(f"kernel[{key!r}]", "expected a map of \"x',y'\" to probability")
        for k2, p in row.items():
            j = split_key(k2, f"kernel[{key!r}]", 2, (ix, iy))
            kernel[idx + j] = _number(p, f"kernel[{key!r}][{k2!r}]")
    mask = (adm1[:, :, None] & adm2[:, None, :]).astype(bool)
    for x, a, b in zip(*np.nonzero(mask)):
        for y in range(ny):
            key = f"{X[x]},{Y[y]},{A[a]},{B[b]}"
            if np.isnan(cost[x, y, a, b]):
                raise ModelFormatError(f"cost[{key!r}]", "missing entry for admissible action")
            if key not in doc["kernel"]:
                raise ModelFormatError(f"kernel[{key!r}]", "missing row for admissible action")
    cost = np.nan_to_num(cost, nan=0.0)
    q0doc = doc["initial_hidden"]
    if isinstance(q0doc, dict):
        q0 = np.zeros(ny)
        for k, p in q0doc.items():
            if k not in iy:
                raise ModelFormatError(f"initial_hidden.{k}", "unknown hidden state")
            q0[iy[k]] = _number(p, f"initial_hidden.{k}")
    elif isinstance(q0doc, list) and len(q0doc) == ny:
        q0 = np.array([_number(p, "initial_hidden") for p in q0doc])
    else:
        raise ModelFormatError("initial_hidden", "expected a map or a list of length |Y|")
    beta = _number(doc["beta"], "beta")
    utility = Utility.from_json(doc["utility"])
    return GameSpec(X, Y, A, B, adm1, adm2, cost, kernel, q0, beta, utility)


def model_to_dict(spec: GameSpec) -> dict:
    X, Y, A, B = spec.observable_states, spec.hidden_states, spec.actions_p1, spec.actions_p2
    cost, kernel = {}, {}
    for x in range(len(X)):
        for a in spec.actions1(x):
            for b in spec.actions2(x):
                for y in range(len(Y)):
                    key = f"{X[x]},{Y[y]},{A[a]},{B[b]}"
                    cost[key] = float(spec.cost[x, y, a, b])
                    row = spec.kernel[x, y, a, b]
                    kernel[key] = {f"{X[i]},{Y[j]}": float(row[i, j])
                                   for i in range(len(X)) for j in range(len(Y)) if row[i, j] != 0.0}
    return {
        "beta": spec.discount,
        "observable_states": list(X),
        "hidden_states": list(Y),
        "actions_p1": list(A),
        "actions_p2": list(B),
        "admissible_p1": {X[x]: [A[a] for a in spec.actions1(x)] for x in range(len(X))},
        "admissible_p2": {X[x]: [B[b] for b in spec.actions2(x)] for x in range(len(X))},
        "cost": cost,
        "kernel": kernel,
        "initial_hidden": {Y[y]: float(spec.initial_hidden[y]) for y in range(len(Y))},
        "utility": spec.utility.to_json(),
    }


def load_model(path) -> GameSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ModelFormatError("model", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError("model", f"invalid JSON: {exc}") from None
    return model_from_dict(doc)


def random_spec(seed, nx=2, ny=2, na=2, nb=2, beta=0.5, utility=None,
                cost_range=(1.0, 2.0), concentration=1.0) -> GameSpec:
    """Random fully admissible model with Dirichlet kernel rows and uniform costs."""
    rng = np.random.default_rng(seed)
    lo, hi = cost_range
    cost = rng.uniform(lo, hi, size=(nx, ny, na, nb))
    kernel = rng.dirichlet(np.full(nx * ny, concentration), size=(nx, ny, na, nb))
    kernel = kernel.reshape(nx, ny, na, nb, nx, ny)
    q0 = rng.dirichlet(np.ones(ny))
    return GameSpec(
        [f"x{i}" for i in range(nx)], [f"y{i}" for i in range(ny)],
        [f"a{i}" for i in range(na)], [f"b{i}" for i in range(nb)],
        np.ones((nx, na)), np.ones((nx, nb)), cost, kernel, q0, beta,
        utility or Utility.linear(),
    )


def make_spec(cost, kernel, initial_hidden, beta, utility=None,
              admissible_p1=None, admissible_p2=None) -> GameSpec:
    """Build a spec with generated identifiers from raw index tables."""
    cost = np.asarray(cost, dtype=float)
    nx, ny, na, nb = cost.shape
    return GameSpec(
        [f"x{i}" for i in range(nx)], [f"y{i}" for i in range(ny)],
        [f"a{i}" for i in range(na)], [f"b{i}" for i in range(nb)],
        np.ones((nx, na)) if admissible_p1 is None else admissible_p1,
        np.ones((nx, nb)) if admissible_p2 is None else admissible_p2,
        cost, kernel, initial_hidden, beta, utility or Utility.linear(),
    )


__all__: Sequence[str] = (
    "Utility", "GameSpec", "History", "validate", "require_valid", "q_marginal_x",
    "q_x_under_belief", "model_from_dict", "model_to_dict", "load_model", "random_spec",
    "make_spec", "check_mixed_action",
)
