"""Compare the compiled kernels with the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row times one kernel call (best of ``repeat``) on both backends and
checks that the results agree.
"""
import argparse
import time

import numpy as np

from pogs import _kernels
from pogs.belief import initial_belief
from pogs.model import Utility, random_spec


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    spec = random_spec(0, 2, 3, 2, 2, 0.5, Utility.exponential(0.5))
    mu = initial_belief(spec)
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 2000)
    s = np.round(rng.uniform(0, 5, 2000), 3)
    w = rng.random(2000)
    w /= w.sum()
    M = rng.normal(size=(6, 6))
    consts = np.array([0.0, 2.0, 4.0])
    args = (spec.cost, spec.kernel, spec.qx, spec.admissible_p1, spec.admissible_p2,
            spec.discount, spec.utility.code, spec.utility.param, consts, 0, mu.y, mu.s, mu.w, 1.0)
    return [
        ("canonicalize (2000 atoms)", lambda b: b.canonicalize(y, s, w, 1e-3), lambda r: r[2]),
        ("phi_update (2000 atoms)",
         lambda b: b.phi_update(spec.cost, spec.kernel, spec.qx, y, s, w, 0, 1, 0, 1, 0.5, 1e-9),
         lambda r: r[2]),
        ("solve_game 6x6", lambda b: b.solve_game(M), lambda r: np.array([r[0]])),
        ("horizon_values depth 4", lambda b: b.horizon_values(*args, 4, 1e-9, 10**7),
         lambda r: r[0]),
        ("horizon_values depth 5", lambda b: b.horizon_values(*args, 5, 1e-9, 10**7),
         lambda r: r[0]),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ns = ap.parse_args()
    backends = _kernels.backends()
    names = [b.NAME for b in backends]
    print(f"{'kernel':28s}" + "".join(f"{n:>14s}" for n in names) + f"{'speedup':>10s}  agree")
    for label, call, pick in cases():
        times, outs = [], []
        for b in backends:
            t, out = best_time(lambda: call(b), ns.repeat)
            times.append(t)
            outs.append(pick(out))
        agree = all(np.allclose(o, outs[0], rtol=1e-10, atol=1e-12) for o in outs[1:])
        speed = times[-1] / times[0] if len(times) > 1 else 1.0
        print(f"{label:28s}" + "".join(f"{t * 1e3:12.3f}ms" for t in times)
              + f"{speed:9.1f}x  {agree}")


if __name__ == "__main__":
    main()
