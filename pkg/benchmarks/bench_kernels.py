"""Benchmark the hot kernels: numba @njit versus the pure-numpy fallback.

Runs every kernel that has both implementations over a grid of sizes,
reports wall time per call and speedup, and cross-checks that the two
backends agree numerically.

Usage:
    python benchmarks/bench_kernels.py [--repeats N]

The numba path needs `pip install numba`; without it (or with
LATENTCAST_PURE_NUMPY=1) only the numpy timings are shown.
"""

import argparse
import time

import numpy as np

from latentcast import kernels


def timeit(fn, args, repeats):
    fn(*args)   # warmup (and numba compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def consistency(ref, got):
    if isinstance(ref, tuple):
        return max(abs(ref[1] - got[1]), float(np.max(np.abs(ref[0] - got[0]))))
    return float(np.max(np.abs(np.asarray(ref) - np.asarray(got))))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []
    for n, t in [(64, 60), (256, 120), (1024, 120)]:
        x = rng.normal(size=(n, t))
        cases.append((f"moving_average            ({n}x{t}, k=9)", "moving_average", (x, 9)))
        cases.append((f"moving_average_adjoint    ({n}x{t}, k=9)", "moving_average_adjoint", (x, 9)))
    for n, d in [(64, 16), (256, 16), (512, 32)]:
        z = rng.normal(size=(n, d))
        dom = rng.integers(0, 5, size=n).astype(np.int64)
        cases.append((f"pair_dist_sum             ({n}x{d})", "pair_dist_sum", (z,)))
        cases.append((f"pair_dist_grad            ({n}x{d})", "pair_dist_grad", (z,)))
        cases.append((f"cross_pair_dist_sum       ({n}x{d})", "cross_pair_dist_sum", (z, dom)))
        cases.append((f"cross_pair_dist_grad      ({n}x{d})", "cross_pair_dist_grad", (z, dom)))

    print(f"active backend: {kernels.BACKEND}")
    header = f"{'kernel':<42} {'numpy':>12} {'numba':>12} {'speedup':>9} {'max|diff|':>11}"
    print(header)
    print("-" * len(header))
    for label, name, call_args in cases:
        impls = kernels.implementations(name)
        t_np = timeit(impls["numpy"], call_args, args.repeats)
        if "numba" in impls:
            t_nb = timeit(impls["numba"], call_args, args.repeats)
            diff = consistency(impls["numpy"](*call_args), impls["numba"](*call_args))
            print(f"{label:<42} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms "
                  f"{t_np / t_nb:>8.2f}x {diff:>11.2e}")
        else:
            print(f"{label:<42} {t_np * 1e3:>10.3f}ms {'-':>12} {'-':>9} {'-':>11}")


if __name__ == "__main__":
    main()
