"""Times the compiled Wiener kernel against the numpy fallback on the same
inputs and reports the deviation between them.

Run:  python3 benchmarks/wiener_bench.py [n_obs] [repeats]
"""

import sys
import time

import numpy as np

from irtkit import _wiener_np


def make_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    return (
        rng.uniform(0.25, 3.0, n),
        rng.integers(0, 2, n),
        rng.normal(0.5, 1.0, n),
        rng.uniform(0.8, 2.5, n),
        rng.uniform(0.05, 0.24, n),
        rng.uniform(0.2, 0.8, n),
    )


def bench(fn, args, repeats):
    fn(*args)  # warm up
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
    repeats = int(sys.argv[2]) if len(sys.argv) > 2 else 30
    args = make_inputs(n)

    try:
        from irtkit import _wiener_c
    except ImportError:
        print("compiled kernel not built; only timing the numpy fallback")
        t_np = bench(_wiener_np.logpdf_and_partials, args, repeats)
        print(f"numpy fallback: {t_np * 1e3:8.3f} ms for {n} observations")
        return

    t_np = bench(_wiener_np.logpdf_and_partials, args, repeats)
    t_c = bench(_wiener_c.logpdf_and_partials, args, repeats)

    out_np = _wiener_np.logpdf_and_partials(*args)
    out_c = _wiener_c.logpdf_and_partials(*args)
    dev = 0.0
    for r, c in zip(out_np, out_c):
        fin = np.isfinite(r)
        if fin.any():
            dev = max(dev, float(np.max(np.abs(r[fin] - c[fin]))))

    print(f"observations: {n}, best of {repeats} runs")
    print(f"numpy fallback:  {t_np * 1e3:8.3f} ms")
    print(f"compiled kernel: {t_c * 1e3:8.3f} ms")
    print(f"speedup: {t_np / t_c:.1f}x, max |difference| {dev:.2e}")


if __name__ == "__main__":
    main()
