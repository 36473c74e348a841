"""Command-line front end: ``pogs <command> --model FILE [options]``.

Every command writes one JSON document (sorted keys, floats with 17
significant digits) to stdout or ``--out``. Exit codes: 0 success, 1
validation or solve failure, 2 usage error or unreadable input.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pogs import belief, exp_utility, oracle, solver
from pogs.errors import ExponentOverflow, ModelFormatError, PogsError
from pogs.model import History, load_model, validate

COMMANDS = ("validate", "solve-finite", "solve-infinite", "filter", "simulate", "check")


class UsageError(Exception):
    pass


def _encode(obj, out):
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            out.append("NaN")
        elif math.isinf(v):
            out.append("Infinity" if v > 0 else "-Infinity")
        else:
            text = format(v, ".17g")
            out.append(text if any(c in text for c in ".en") else text + ".0")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj)):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)) + ": ")
            _encode(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, 17 significant digits for floats."""
    out = []
    _encode(obj, out)
    return "".join(out) + "\n"


@dataclass
class RunConfig:
    command: str
    model: str
    horizon: int | None = None
    tol: float | None = None
    seed: int = 0
    samples: int = 10_000
    merge_tol: float = belief.MERGE_TOL
    node_budget: int | None = None
    fast_exp: bool = False
    out: str | None = None
    x0: str | None = None
    history: str | None = None
    policy: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        for name in ("tol", "samples", "node_budget", "workers"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if self.merge_tol < 0:
            raise UsageError("--merge-tol must be nonnegative")
        if self.horizon is not None and self.horizon < 0:
            raise UsageError("--horizon must be nonnegative")
        if self.command in ("solve-finite", "simulate") and self.horizon is None:
            raise UsageError(f"{self.command} requires --horizon")
        if self.command == "solve-infinite" and self.tol is None:
            raise UsageError("solve-infinite requires --tol")
        if self.command == "filter" and self.history is None:
            raise UsageError("filter requires --history")
        if self.command == "simulate" and self.policy is None:
            raise UsageError("simulate requires --policy")
        if self.node_budget is None and os.environ.get("POGS_NODE_BUDGET"):
            self.node_budget = int(os.environ["POGS_NODE_BUDGET"])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pogs", description="Risk-sensitive partially observable zero-sum games.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--horizon", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--merge-tol", type=float, default=belief.MERGE_TOL)
    p.add_argument("--node-budget", type=int, help="overrides POGS_NODE_BUDGET")
    p.add_argument("--fast-exp", action="store_true", help="exponential-utility fast path")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--x0", help="initial observable state (default: first listed)")
    p.add_argument("--history", help="history JSON file (filter)")
    p.add_argument("--policy", help="policy or solve-result JSON file (simulate)")
    p.add_argument("--workers", type=int, default=1)
    return p


def _read_json(path, field):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ModelFormatError(field, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(field, f"invalid JSON: {exc}") from None


def _x0(spec, cfg):
    return 0 if cfg.x0 is None else spec.index("x", cfg.x0)


def cmd_validate(spec, cfg):
    problems = validate(spec)
    return {"valid": not problems, "violations": problems}, (0 if not problems else 1)


def cmd_solve_finite(spec, cfg):
    x0 = _x0(spec, cfg)
    if cfg.fast_exp:
        value = exp_utility.solve_finite_exp(spec, x0, cfg.horizon)
        return {"x0": spec.observable_states[x0], "depth": cfg.horizon, "value": value,
                "method": "exponential_fast_path"}, 0
    res = solver.solve_finite(spec, x0, cfg.horizon, merge_tol=cfg.merge_tol,
                              node_budget=cfg.node_budget)
    return res.to_json(spec), 0


def cmd_solve_infinite(spec, cfg):
    res = solver.solve_infinite(spec, _x0(spec, cfg), cfg.tol, merge_tol=cfg.merge_tol,
                                node_budget=cfg.node_budget, workers=cfg.workers)
    return res.to_json(spec), 0


def cmd_filter(spec, cfg):
    hist = History.from_json(spec, _read_json(cfg.history, "history"))
    mus = belief.filter(spec, hist, cfg.merge_tol)
    return {"history": hist.to_json(spec), "beliefs": [mu.to_json(spec) for mu in mus]}, 0


def _load_policy(spec, cfg):
    doc = _read_json(cfg.policy, "policy")
    if isinstance(doc, dict) and "policy" in doc and "x0" in doc:
        x0 = spec.index("x", doc["x0"])
        doc = doc["policy"]
    else:
        x0 = _x0(spec, cfg)
    return x0, solver.PolicyTree.from_json(spec, doc, x0, cfg.horizon)


def cmd_simulate(spec, cfg):
    x0, tree = _load_policy(spec, cfg)
    mean, hw = oracle.simulate_mc(spec, x0, tree.pi, tree.sigma, cfg.horizon, cfg.samples,
                                  cfg.seed, workers=cfg.workers)
    return {"x0": spec.observable_states[x0], "horizon": cfg.horizon, "samples": cfg.samples,
            "seed": cfg.seed, "mean": mean, "half_width": hw}, 0


def _random_rule(rng, adm):
    table = {}

    def rule(h):
        if h not in table:
            v = rng.random(adm.shape[1]) * adm[h[-1]]
            table[h] = v / v.sum()
        return table[h]
    return rule


def _swap(tree):
    table = {k: (z[::-1].copy(), e) for k, (z, e) in tree.table.items()}
    return solver.PolicyTree(tree.x0, tree.horizon, table)


def run_checks(spec, x0, N, seed=0, samples=20_000, merge_tol=belief.MERGE_TOL):
    """Oracle suite: list of {"check", "passed", "detail"} rows."""
    rows = []

    def row(name, passed, **detail):
        rows.append({"check": name, "passed": bool(passed), "detail": detail})

    problems = validate(spec)
    row("model_valid", not problems, violations=problems)
    if problems:
        return rows
    depth = min(N, 3)
    worst, count = 0.0, 0
    for k in range(depth + 1):
        for path, *_ in oracle._walk(spec, x0, k, oracle.DEFAULT_BUDGET):
            hist = History((x0,) + tuple(s[2] for s in path), tuple((s[0], s[1]) for s in path))
            mu = belief.filter(spec, hist, merge_tol)[-1]
            worst = max(worst, oracle.total_variation(mu.atoms(), oracle.exact_posterior(spec, hist)))
            count += 1
    row("filter_vs_exact_posterior", worst <= 1e-9, histories=count, max_tv=worst)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(3):
        p1, p2 = _random_rule(rng, spec.admissible_p1), _random_rule(rng, spec.admissible_p2)
        a = solver.evaluate_policy_pair(spec, x0, p1, p2, N, merge_tol=merge_tol)
        worst = max(worst, abs(a - oracle.enumerate_value(spec, x0, p1, p2, N)))
    row("policy_evaluation_vs_enumeration", worst <= 1e-9, max_abs_diff=worst)

    res = solver.solve_finite(spec, x0, N, merge_tol=merge_tol)
    comp = solver.evaluate_policy_pair(spec, x0, res.policy, res.policy, N, merge_tol=merge_tol)
    row("optimal_pair_composition", abs(comp - res.value) <= 1e-9, value=res.value, evaluated=comp)
    try:
        rep = oracle.saddle_check(spec, x0, N, res)
        row("saddle_inequalities", rep.passed, violation=rep.violation)
        if N > 0 and spec.shape[2] > 1:
            bad = solver.SolveResult(x0=x0, value=res.value, depth=N, policy=_swap(res.policy))
            neg = oracle.saddle_check(spec, x0, N, bad)
            row("saddle_negative_control", not neg.passed, violation=neg.violation)
    except PogsError as exc:
        row("saddle_inequalities", False, error=str(exc))

    if spec.utility.kind == "exponential" and spec.utility.param > 0:
        try:
            fast = exp_utility.solve_finite_exp(spec, x0, N)
            rel = abs(fast - res.value) / abs(res.value)
            row("exponential_fast_path", rel <= 1e-8, relative_diff=rel)
        except ExponentOverflow as exc:
            row("exponential_fast_path", False, error=str(exc))

    mu0 = belief.initial_belief(spec)
    n_inf = 0
    while n_inf < 4 and solver.tree_size_bound(spec, n_inf + 1) <= 200_000:
        n_inf += 1
    tol = solver.tail_bound(spec, n_inf, 1.0, mu0)
    inf = solver.solve_infinite(spec, x0, tol, merge_tol=merge_tol)
    lo, up, v0 = (np.array(inf.backups[k]) for k in ("lower", "upper", "v0"))
    gaps = [up[n] - lo[n] - solver.tail_bound(spec, n, 1.0, mu0) for n in range(inf.depth + 1)]
    ok = (np.all(np.diff(lo) >= -1e-12) and np.all(np.diff(up) <= 1e-12)
          and np.all(v0 <= lo + 1e-12) and max(gaps) <= 1e-9)
    row("infinite_horizon_bracket", ok, depth=inf.depth, bracket=list(inf.bracket),
        max_gap_excess=max(gaps))
    if spec.shape[1] == 1 and spec.utility.kind == "linear":
        ref = oracle.shapley_value(spec, 1e-10)[x0]
        row("shapley_referee", inf.bracket[0] - 1e-9 <= ref <= inf.bracket[1] + 1e-9,
            shapley=ref, bracket=list(inf.bracket))

    exact = oracle.enumerate_value(spec, x0, res.policy, res.policy, N)
    mean, hw = oracle.simulate_mc(spec, x0, res.policy, res.policy, N, samples, seed)
    row("monte_carlo_agreement", abs(mean - exact) <= 2 * hw or hw == 0 and mean == exact,
        mean=mean, half_width=hw, exact=exact)
    return rows


def cmd_check(spec, cfg):
    N = 2 if cfg.horizon is None else cfg.horizon
    rows = run_checks(spec, _x0(spec, cfg), N, seed=cfg.seed, samples=cfg.samples,
                      merge_tol=cfg.merge_tol)
    passed = all(r["passed"] for r in rows)
    return {"horizon": N, "rows": rows, "passed": passed}, (0 if passed else 1)


HANDLERS = {
    "validate": cmd_validate, "solve-finite": cmd_solve_finite,
    "solve-infinite": cmd_solve_infinite, "filter": cmd_filter,
    "simulate": cmd_simulate, "check": cmd_check,
}


def _emit(doc, cfg_out):
    text = dumps(doc)
    if cfg_out:
        Path(cfg_out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        _emit({"error": "usage", "message": str(exc)}, None)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    out = ns.out
    try:
        cfg = RunConfig(**vars(ns))
        spec = load_model(cfg.model)
        if cfg.command != "validate":
            problems = validate(spec)
            if problems:
                _emit({"error": "invalid model", "violations": problems}, out)
                return 1
        doc, code = HANDLERS[cfg.command](spec, cfg)
    except UsageError as exc:
        _emit({"error": "usage", "message": str(exc)}, out)
        return 2
    except ModelFormatError as exc:
        _emit({"error": "malformed input", "field": exc.field, "message": str(exc)}, out)
        return 2
    except (PogsError, ValueError, OverflowError) as exc:
        doc = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "achievable", None) is not None:
            doc["achievable_tol"] = exc.achievable
        _emit(doc, out)
        return 1
    _emit(doc, out)
    return code


if __name__ == "__main__":
    sys.exit(main())
