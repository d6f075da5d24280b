#!/usr/bin/env python3
"""Compiled vs pure-Python gridding backends.

Times the spreading/interpolation kernels alone and the NUFFTs built on
them, for both backends, and checks that the two agree.  Results go to
stdout as CSV (4 significant digits).

    python benchmarks/bench_gridding.py --n 16384 --cols 32 --repeats 3
"""

import argparse
import csv
import sys
import time

import numpy as np

from fastinudft import _gridding
from fastinudft._gridding import GridOperator
from fastinudft.problem import PointDistribution, generate_points
from fastinudft.transforms import Type2Plan, Type3Plan


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16384, help="number of frequencies N (M = 4N)")
    ap.add_argument("--cols", type=int, default=32, help="right-hand sides per call")
    ap.add_argument("--tol", type=float, default=1e-12)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    if _gridding.BACKEND != "compiled":
        print("compiled extension not built; only the python backend is available",
              file=sys.stderr)
    backends = ["python"] + (["compiled"] if _gridding.BACKEND == "compiled" else [])

    N, M, s = args.n, 4 * args.n, args.cols
    prob = generate_points(PointDistribution("rp", 0.4, 0.4, 0), M, N)
    x, w = prob.sample_points, prob.frequencies
    rng = np.random.default_rng(0)
    U = rng.standard_normal((N, s)) + 1j * rng.standard_normal((N, s))
    F = rng.standard_normal((M, s)) + 1j * rng.standard_normal((M, s))
    n_grid = 1 << int(np.ceil(np.log2(2 * N)))
    grid = rng.standard_normal((s, n_grid)) + 1j * rng.standard_normal((s, n_grid))
    vals = rng.standard_normal((s, M)) + 1j * rng.standard_normal((s, M))
    t = x * n_grid

    rows, results = [], {}
    for be in backends:
        op = GridOperator(t, n_grid, 14, 2.30 * 14, backend=be)
        p2 = Type2Plan(x, N, args.tol, backend=be)
        p3 = Type3Plan(x, w, args.tol, backend=be)
        cases = {
            "interp": lambda: op.interp(grid),
            "spread": lambda: op.spread(vals),
            "type2_forward": lambda: p2.forward(U),
            "type2_adjoint": lambda: p2.adjoint(F),
            "type3_forward": lambda: p3.forward(U),
            "type3_adjoint": lambda: p3.adjoint(F),
        }
        for name, fn in cases.items():
            sec, out = best_of(fn, args.repeats)
            results[be, name] = out
            rows.append(dict(kernel=name, backend=be, N=N, M=M, cols=s, seconds=sec))

    if len(backends) == 2:
        for r in rows:
            if r["backend"] == "compiled":
                py = next(q for q in rows if q["kernel"] == r["kernel"] and q["backend"] == "python")
                r["speedup"] = py["seconds"] / r["seconds"]
                a, b = results["compiled", r["kernel"]], results["python", r["kernel"]]
                r["rel_diff"] = float(np.linalg.norm(a - b) / np.linalg.norm(b))

    keys = ["kernel", "backend", "N", "M", "cols", "seconds", "speedup", "rel_diff"]
    wr = csv.writer(sys.stdout)
    wr.writerow(keys)
    for r in rows:
        wr.writerow([f"{r[k]:.3e}" if isinstance(r.get(k), float) else r.get(k, "") for k in keys])


if __name__ == "__main__":
    main()
