"""Compiled vs numpy sampling kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 2000]

Prints the best wall time per call for each kernel and backend, plus the speedup.
"""
import argparse
import timeit

import numpy as np

from activeflow import _kernels_py
from activeflow.paths import Scheduler, kappa

try:
    from activeflow import _kernels as _compiled
except ImportError:
    _compiled = None


def inputs(n, L=12, V=8, steps=16, seed=0):
    rng = np.random.default_rng(seed)
    S = V + 1
    w = 0.3 * rng.normal(size=(L * S + 3, L * V))
    grid = np.arange(steps) / steps
    k, dk = kappa(Scheduler("quadratic"), grid)
    scales = dk / (1 - k) / steps
    t_last = grid[-1]
    gen = (w[: L * S].reshape(L, S, L * V), w[L * S:], np.full((n, L), V, dtype=np.int64), grid, k,
           scales, rng.random((steps, n, L)), rng.random((n, L)), V, V, True, True,
           np.array([t_last, 1 - t_last, t_last ** 2]))
    x = rng.integers(0, S, size=(n, L))
    post = rng.dirichlet(np.ones(V), size=(n, L))
    euler = (x, post, 0.2, rng.random((n, L)), S, 1e-8)
    probs = rng.dirichlet(np.ones(S), size=n * L)
    cat = (probs, rng.random(n * L))
    return {"categorical": cat, "euler_sample": euler, "softmax_generate": gen}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="sequences per call")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    cases = inputs(args.n)
    print(f"{'kernel':<18}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        row = []
        for mod in (_kernels_py, _compiled):
            if mod is None:
                row.append(float("nan"))
                continue
            fn = getattr(mod, name)
            number = 3
            t = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat))
            row.append(1e3 * t / number)
        print(f"{name:<18}{row[0]:>12.2f}{row[1]:>12.2f}{row[0] / row[1]:>9.1f}x")


if __name__ == "__main__":
    main()
