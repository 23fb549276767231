"""Benchmark the numba-compiled kernels against the pure Python/numpy fallback.

Both backends consume identical pre-generated uniforms and must produce
bit-identical results; the point of the comparison is speed. Sizes are kept
moderate so the pure path finishes in a few seconds. Run with:

    python benchmarks/bench_kernels.py [--full]

--full additionally times the numba path at production scale (650k
residents, 448 days, 1000 replicates), which the pure path could not finish
in reasonable time.
"""

import argparse
import time

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from deidpolicy._kernels import HAVE_NUMBA, nb_kernels, py_kernels


def _timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _setup(n_pop, n_bins, n_days, mean_daily, n_reps, n_pol, seed=0):
    rng = np.random.default_rng(seed)
    pool = rng.multinomial(n_pop, rng.dirichlet(np.full(n_bins, 2.0))).astype(np.int64)
    cum = np.cumsum(pool)
    daily = rng.poisson(mean_daily, n_days).astype(np.int64)
    while daily.sum() > n_pop:
        daily = rng.poisson(mean_daily / 2, n_days).astype(np.int64)
    key = SeedSequence([seed, 47037]).generate_state(2, np.uint64)
    total = int(daily.sum())
    uniforms = np.concatenate([
        Generator(Philox(key=key, counter=[0, 0, r, 0])).random(total)
        for r in range(n_reps)
    ])
    uptr = np.arange(n_reps + 1, dtype=np.int64) * total
    key_mat = np.vstack([
        rng.integers(0, max(g, 1), size=n_bins).astype(np.int32)
        for g in np.linspace(1, n_bins, n_pol).astype(int)
    ])
    n_keys = key_mat.max(axis=1).astype(np.int64) + 1
    return cum, daily, uniforms, uptr, key_mat, n_keys


def bench_eval(kernels, cum, daily, uniforms, uptr, key_mat, n_keys, n_reps):
    out = np.empty((n_reps, key_mat.shape[0], len(daily)))
    kernels.eval_matrix(cum, daily, uniforms, uptr, key_mat, n_keys, 11, 5, 0, out)
    return out


def bench_draw(kernels, cum, uniforms, n):
    out = np.zeros(len(cum), dtype=np.int64)
    kernels.draw_bin_counts(cum, uniforms[:n], n, out)
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--full", action="store_true",
                        help="also time numba at production scale")
    args = parser.parse_args()

    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare against")

    print(f"{'benchmark':<44}{'pure':>10}{'numba':>10}{'speedup':>9}")

    # single multivariate hypergeometric draw
    cum, daily, uniforms, uptr, key_mat, n_keys = _setup(
        n_pop=50_000, n_bins=2424, n_days=28, mean_daily=40, n_reps=20, n_pol=16)
    n = 5000
    bench_draw(nb_kernels, cum, uniforms, n)  # compile
    t_py = _timeit(lambda: bench_draw(py_kernels, cum, uniforms, n))
    t_nb = _timeit(lambda: bench_draw(nb_kernels, cum, uniforms, n))
    assert np.array_equal(bench_draw(py_kernels, cum, uniforms, n),
                          bench_draw(nb_kernels, cum, uniforms, n))
    print(f"{'draw 5,000 cases from 2,424 bins':<44}{t_py:>9.3f}s{t_nb:>9.3f}s"
          f"{t_py / t_nb:>8.0f}x")

    # full per-policy risk evaluation, results checked for equality
    bench_eval(nb_kernels, cum, daily, uniforms, uptr, key_mat, n_keys, 20)
    t_py = _timeit(lambda: bench_eval(py_kernels, cum, daily, uniforms, uptr,
                                      key_mat, n_keys, 20), repeat=1)
    t_nb = _timeit(lambda: bench_eval(nb_kernels, cum, daily, uniforms, uptr,
                                      key_mat, n_keys, 20))
    out_py = bench_eval(py_kernels, cum, daily, uniforms, uptr, key_mat, n_keys, 20)
    out_nb = bench_eval(nb_kernels, cum, daily, uniforms, uptr, key_mat, n_keys, 20)
    assert np.array_equal(out_py, out_nb, equal_nan=True), "backends diverged"
    print(f"{'evaluate 16 policies x 28 days x 20 reps':<44}{t_py:>9.3f}s{t_nb:>9.3f}s"
          f"{t_py / t_nb:>8.0f}x")
    print("backends bit-identical: yes")

    if args.full:
        cum, daily, uniforms, uptr, key_mat, n_keys = _setup(
            n_pop=650_000, n_bins=2424, n_days=448, mean_daily=270,
            n_reps=50, n_pol=96, seed=1)
        t_nb = _timeit(lambda: bench_eval(nb_kernels, cum, daily, uniforms, uptr,
                                          key_mat, n_keys, 50), repeat=1)
        print(f"{'numba only: 96 policies x 448 days x 50 reps':<44}{'':>10}"
              f"{t_nb:>9.3f}s")
        print(f"  -> about {t_nb * 20:.0f}s per 1,000 replicates at county scale")


if __name__ == "__main__":
    main()
