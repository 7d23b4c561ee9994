"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n-users 10] [--repeat 5]

Prints microseconds per call for each kernel, then the wall time of a batch
of greedy episodes run end to end under each backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from schedq import _pykernels

try:
    from schedq import _ckernels
except ImportError:
    _ckernels = None

EPISODES_SNIPPET = """
import time
from schedq import env as E, kernels
from schedq.baseline import run_greedy_episode
suite = E.generate_env_suite(0, 4)
t = time.perf_counter()
steps = sum(run_greedy_episode(c, seed=s).steps for c in suite for s in range({episodes}))
print(kernels.BACKEND, steps, time.perf_counter() - t)
"""


def kernel_cases(n, rng):
    P = rng.uniform(0, 5, (n, n))
    np.fill_diagonal(P, 0)
    buffers = rng.uniform(0, 10, n)
    buffers[0] = 0.0
    w = rng.uniform(1, 3, n)
    values = rng.normal(size=n)
    xi_w, xi_p = rng.normal(size=n), rng.normal(size=(n, n))
    return {
        "penalties": lambda k: k.penalties(P, (1, 2)),
        "masked_argmin": lambda k: k.masked_argmin(values, buffers),
        "masked_argmax": lambda k: k.masked_argmax(values, buffers),
        "serve": lambda k: k.serve(buffers.copy(), w, 3),
        "apply_drift": lambda k: k.apply_drift(w.copy(), P.copy(), xi_w, xi_p, 0.05, 0.2, 0.5, 4.0, 10.0),
    }


def per_call_us(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-users", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20000)
    ap.add_argument("--episodes", type=int, default=50, help="greedy episodes per environment")
    args = ap.parse_args(argv)

    cases = kernel_cases(args.n_users, np.random.default_rng(0))
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<16}" + "".join(f"{name + ' us':>14}" for name, _ in backends) + f"{'speedup':>10}")
    for name, case in cases.items():
        times = [per_call_us(lambda: case(mod), args.repeat, args.number) for _, mod in backends]
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
        print(f"{name:<16}" + "".join(f"{t:>14.3f}" for t in times) + speed)
    if _ckernels is None:
        print("compiled extension not built; only the fallback was timed")

    print()
    code = EPISODES_SNIPPET.format(episodes=args.episodes)
    for force in ("1", "0"):
        env = dict(os.environ, SCHEDQ_PURE_PYTHON=force)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, steps, secs = out.stdout.split()
        print(f"greedy episodes [{backend}]: {steps} steps in {float(secs):.3f} s "
              f"({float(secs) / int(steps) * 1e6:.1f} us/step)")


if __name__ == "__main__":
    main()
