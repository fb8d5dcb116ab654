"""Compiled core vs NumPy engine on the jump-OU benchmark.

    python benchmarks/bench_backends.py [--paths N] [--repeat R]

Times the coupled, averaged and frozen batch kernels on both backends and
checks that they return the same bytes.
"""

import argparse
import time

from slowfast import backend
from slowfast.ergodic import AveragedDrift
from slowfast.integrate import ScaleParams, averaged_batch, coupled_batch, frozen_batch
from slowfast.model import make_jump_ou_benchmark
from slowfast.randomness import RandomPlan


def cases(paths):
    m = make_jump_ou_benchmark()
    ab = AveragedDrift.analytic(m)
    plan = RandomPlan(1)
    return {
        "coupled eps=2^-5": lambda: coupled_batch(m, ScaleParams(2**-5, 1.0, 0.1 * 2**-5), 0.0, 0.5, plan, paths,
                                                  abar=ab, threads=1).X_T,
        "averaged dt=1e-3": lambda: averaged_batch(ab, m, 0.0, 1.0, 1e-3, plan, paths, direction=1.0,
                                                   threads=1)[1],
        "frozen H=10": lambda: frozen_batch(m, 0.0, 0.5, 10.0, 0.01, plan, paths, window=(1.0, 10.0),
                                            threads=1).integral,
    }


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not backend.HAVE_CORE:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'kernel':<20}{'python s':>10}{'compiled s':>12}{'speedup':>9}  identical")
    for name, fn in cases(args.paths).items():
        with backend.use("python"):
            tp, op = best_of(fn, args.repeat)
        with backend.use("compiled"):
            tc, oc = best_of(fn, args.repeat)
        print(f"{name:<20}{tp:>10.3f}{tc:>12.4f}{tp / tc:>8.1f}x  {op.tobytes() == oc.tobytes()}")


if __name__ == "__main__":
    main()
