"""Time the compiled DTW kernel against the pure-Python fallback.

Usage: python benchmarks/bench_dtw.py [--sizes 100 300 1000] [--repeat 3]

Prints one JSON line per (backend, size) with the best wall time of the
accumulation plus backtracking step, and checks both backends agree.
"""
import argparse
import json
import time

import numpy as np
from scipy.spatial.distance import cdist

from vawsvc import kernels


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    rng = np.random.default_rng(0)
    for n in args.sizes:
        cost = cdist(rng.normal(size=(n, 24)), rng.normal(size=(int(n * 1.2), 24)))
        paths = {}
        times = {}
        for name, mod in backends.items():
            # the pure-Python kernel is quadratic in interpreted code; skip huge grids
            if name == "python" and n > 2000:
                continue
            times[name], paths[name] = best_time(lambda: mod.backtrack(mod.accumulated_cost(cost)), args.repeat)
            print(json.dumps({"backend": name, "size": [n, int(n * 1.2)], "seconds": round(times[name], 6)}))
        if len(paths) == 2:
            assert np.array_equal(paths["python"], paths["cython"]), "backends disagree"
            print(json.dumps({"size": [n, int(n * 1.2)], "speedup": round(times["python"] / times["cython"], 1)}))


if __name__ == "__main__":
    main()
