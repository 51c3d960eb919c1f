"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both variants directly in one process.  ``--end-to-end``
additionally runs a short MC experiment twice in subprocesses, once with
``RASOPT_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from rasopt import kernels
from rasopt.data import SyntheticSpec, gen_mc


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases():
    syn = gen_mc(SyntheticSpec("mc", N=500, n=100, r=5, density=0.3, seed=0))
    P = syn.problem
    U = P.manifold.random_point(0)
    data = (U, P.col_ptr, P.rows, P.vals)
    rng = np.random.default_rng(0)
    batch = rng.integers(0, P.N, 10)
    full = P.population
    G = rng.standard_normal((100, 5))
    p, q = rng.random(100) * 0.01, rng.random(5) * 0.01
    return [
        ("mc_batch grad, 10 cols", "mc_batch", (*data, batch, 0.01, True), 200),
        ("mc_batch grad, 500 cols", "mc_batch", (*data, full, 0.01, True), 5),
        ("mc_coefficients, 500 cols", "mc_coefficients", (*data, full, 0.01), 5),
        ("enforce_bound 100x5", "enforce_bound", (p, q, G), 2000),
    ]


E2E = textwrap.dedent(
    """
    import time
    from rasopt.harness import RunConfig, run_experiment
    cfg = RunConfig(problem="mc", optimizer="rasa-lr", iters=2000, n=100, N=500, rank=5, density=0.3)
    run_experiment(RunConfig(**{**cfg.__dict__, "iters": 2}))
    t = time.perf_counter(); run_experiment(cfg); print(time.perf_counter() - t)
    """
)


def end_to_end():
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = {**os.environ, "RASOPT_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip())
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel':<28}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>10}")
    for label, name, call_args, number in kernel_cases():
        nb = getattr(kernels, name + "_numba")
        npy = getattr(kernels, name + "_numpy")
        nb(*call_args)  # compile outside the timed region
        t_nb = best_of(lambda: nb(*call_args), args.repeat, number)
        t_np = best_of(lambda: npy(*call_args), args.repeat, number)
        print(f"{label:<28}{t_nb * 1e6:>12.1f}{t_np * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")

    if args.end_to_end:
        t = end_to_end()
        print(f"\nMC rasa-lr, 2000 steps: numba {t['numba']:.2f}s, numpy {t['numpy']:.2f}s "
              f"({t['numpy'] / t['numba']:.1f}x)")


if __name__ == "__main__":
    main()
