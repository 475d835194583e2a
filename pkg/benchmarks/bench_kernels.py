#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the three hot paths (batched forward pass, risk+gradient, and the
full inner gradient-descent solve) on a credit-sized problem under both
backends, checks they agree, and prints a timing table.

    python benchmarks/bench_kernels.py [--rows N] [--hidden H] [--repeat R]
"""

import argparse
import time

import numpy as np

from performa import kernels


def make_problem(rows, dim, hidden, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(rows, dim))
    y = rng.choice([0.0, 0.1], size=rows)
    w = np.full(rows, 1.0 / rows)
    w1 = rng.normal(size=(hidden, dim)) * 0.4
    b1 = rng.normal(size=hidden) * 0.1
    w2 = rng.normal(size=hidden) * 0.4
    return X, y, w, w1, b1, w2, 0.05


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--dim", type=int, default=11)
    parser.add_argument("--hidden", type=int, default=6)
    parser.add_argument("--gd-steps", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    X, y, w, w1, b1, w2, b2 = make_problem(args.rows, args.dim, args.hidden)
    backends = {"numpy": kernels.PY}
    if kernels.NUMBA is not None:
        backends["numba"] = kernels.NUMBA
    else:
        print("numba unavailable; benchmarking the numpy path only")

    cases = {
        "forward": lambda k: k.mlp_forward(w1, b1, w2, b2, 0.01, 0.9, X),
        "value_and_grad": lambda k: k.value_and_grad(
            w1, b1, w2, b2, 0.01, 0.9, X, y, w),
        f"gd_minimize ({args.gd_steps} steps)": lambda k: k.gd_minimize(
            w1, b1, w2, b2, 0.01, 0.9, X, y, w, 0.1, 0.0, args.gd_steps, True),
    }

    # warm up (first numba call compiles)
    for k in backends.values():
        for fn in cases.values():
            fn(k)

    print(f"rows={args.rows} dim={args.dim} hidden={args.hidden} "
          f"(best of {args.repeat})")
    header = f"{'kernel':<28}" + "".join(f"{name:>12}" for name in backends)
    print(header)
    print("-" * len(header))
    for case_name, fn in cases.items():
        outs = {}
        row = f"{case_name:<28}"
        for name, k in backends.items():
            dt, out = best_of(lambda k=k: fn(k), args.repeat)
            outs[name] = out
            row += f"{dt * 1e3:>10.2f}ms"
        print(row)
        if len(outs) == 2:
            a, b = outs["numpy"], outs["numba"]
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            worst = max(np.max(np.abs(np.asarray(x) - np.asarray(z)))
                        for x, z in zip(a, b))
            print(f"{'':<28}  max |numpy - numba| = {worst:.3e}")


if __name__ == "__main__":
    main()
