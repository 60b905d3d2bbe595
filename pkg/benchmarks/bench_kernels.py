"""Benchmark the hot kernels: numba @njit vs the pure-numpy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py

The same kernels are selected at import time by HEDONIC_NUMBA; this
script calls both implementations directly so one process can compare
them.  Trunk matrix products ride on BLAS in both modes and are not
benchmarked here.
"""

import time

import numpy as np

from hedonix import _accel

N_REPEAT = 20


def bench(label, func, *args):
    func(*args)  # warm-up; first numba call pays compilation
    times = np.empty(N_REPEAT)
    for k in range(N_REPEAT):
        start = time.perf_counter()
        func(*args)
        times[k] = time.perf_counter() - start
    print(f"  {label:<18} {1e3 * times.mean():8.2f} ms +/- {1e3 * times.std():.2f}")
    return times.mean()


def bench_cbow(d, r, n, K=4):
    rng = np.random.default_rng(0)
    emb = rng.normal(0, 0.1, (d, r))
    ctx = rng.integers(0, d, (n, K)).astype(np.int64)
    centers = rng.integers(0, d, n).astype(np.int64)
    print(f"cbow window gradient: vocab {d}, dim {r}, {n} windows")
    t_np = bench("numpy", _accel._cbow_loss_grad_numpy, emb, ctx, centers)
    if _accel._NUMBA_CBOW is not None:
        t_nb = bench("numba", _accel._NUMBA_CBOW, emb, ctx, centers)
        print(f"  speedup x{t_np / t_nb:.2f}")
    else:
        print("  numba unavailable; numpy path only")


def bench_price_loss():
    rng = np.random.default_rng(1)
    n, T = 20000, 36
    H = np.ascontiguousarray(rng.normal(50, 10, (n, T)))
    P = np.ascontiguousarray(rng.normal(50, 10, (n, T)))
    Q = np.ascontiguousarray(rng.integers(1, 40, (n, T)).astype(float))
    M = np.ascontiguousarray(rng.random((n, T)) > 0.4)
    print(f"masked price loss + smoothness: {n} products x {T} periods")
    t_np = bench("numpy", _accel._price_loss_grad_numpy, H, P, Q, M, 0.5)
    if _accel._NUMBA_PRICE is not None:
        t_nb = bench("numba", _accel._NUMBA_PRICE, H, P, Q, M, 0.5)
        print(f"  speedup x{t_np / t_nb:.2f}")
    else:
        print("  numba unavailable; numpy path only")


if __name__ == "__main__":
    print(f"active backend: {_accel.backend()}")
    # the regime the embed stage actually runs in: tiny vocabulary, many windows
    bench_cbow(d=60, r=16, n=50000)
    # a large-dictionary regime where the work is matrix-product shaped
    bench_cbow(d=2000, r=64, n=20000)
    bench_price_loss()
