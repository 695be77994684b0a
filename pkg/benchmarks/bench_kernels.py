"""Time the closed-loop tick on the compiled and the pure-Python kernels.

    python benchmarks/bench_kernels.py [--ticks 2000] [--nodes 12 50]
"""

import argparse
import time

import numpy as np

from minimaxflow import kernels
from minimaxflow.microgrid import ClosedLoop
from minimaxflow.scenario import build_model, generate_random_instance


def time_backend(model, backend, ticks, repeat=3):
    best = np.inf
    for _ in range(repeat):
        loop = ClosedLoop(model, mode="P", backend=backend)
        t0 = time.perf_counter()
        loop.advance(ticks)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--ticks", type=int, default=2000)
    p.add_argument("--nodes", type=int, nargs="+", default=[12, 50, 200])
    args = p.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    print(f"{'nodes':>6} {'python us/tick':>15} {'cython us/tick':>15} {'speedup':>8}")
    for n in args.nodes:
        model = build_model(generate_random_instance(0, n, max(2, n // 4)))
        py = time_backend(model, kernels.python_backend, args.ticks, repeat=1)
        cy = time_backend(model, kernels.compiled_backend, args.ticks)
        print(f"{n:>6} {1e6 * py / args.ticks:>15.1f} {1e6 * cy / args.ticks:>15.2f} {py / cy:>8.0f}x")


if __name__ == "__main__":
    main()
