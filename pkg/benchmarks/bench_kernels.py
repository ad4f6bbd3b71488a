"""Time full solves with the compiled and the pure-Python kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 10 20 40] [--tasks 3]

Prints one row per (size, norm) with the median of ``--repeats`` solves per
backend, the speedup and the largest elementwise difference between the
two estimates.
"""

import argparse
import statistics
import time

import numpy as np

from multitask_ggm import ProblemSpec, TaskSuite, solve
from multitask_ggm._backend import available
from multitask_ggm.bcd import screening_threshold


def make_suite(n, k, seed):
    rng = np.random.default_rng(seed)
    covs = []
    for _ in range(k):
        x = rng.standard_normal((4 * n, n))
        covs.append(x.T @ x / len(x))
    return TaskSuite(np.stack(covs), np.full(k, 4.0 * n))


def timed(suite, spec, backend, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        precs, report = solve(suite, spec, backend=backend,
                              track_eigenvalues=False)
        times.append(time.perf_counter() - start)
    return statistics.median(times), precs.matrices, report.sweeps_run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 40])
    parser.add_argument("--tasks", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--sweeps", type=int, default=20)
    args = parser.parse_args()

    backends = available()
    if "compiled" not in backends:
        print("compiled kernel not built; timing the Python kernel only")
    print(f"{'N':>4} {'p':>4} {'sweeps':>6} "
          + " ".join(f"{b + ' [s]':>14}" for b in backends)
          + f" {'speedup':>8} {'max |diff|':>11}")
    for n in args.sizes:
        for norm in ("2", "inf"):
            suite = make_suite(n, args.tasks, seed=n)
            rho = 0.2 * float(screening_threshold(suite, norm).max())
            spec = ProblemSpec(rho=rho, norm=norm, max_sweeps=args.sweeps,
                               objective_tol=0.0)
            results = {b: timed(suite, spec, b, args.repeats)
                       for b in backends}
            row = f"{n:>4} {norm:>4} {args.sweeps:>6} " + " ".join(
                f"{results[b][0]:>14.4f}" for b in backends)
            if len(backends) == 2:
                (tc, mc, _), (tp, mp, _) = (results["compiled"],
                                            results["python"])
                row += f" {tp / tc:>8.1f} {np.max(np.abs(mc - mp)):>11.1e}"
            print(row)


if __name__ == "__main__":
    main()
