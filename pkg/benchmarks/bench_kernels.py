"""Compare the numba kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--n 100000] [--K 128] [--repeat 5]

Each kernel is warmed up once (numba compiles on first call), then timed
as the best of ``--repeat`` runs. Results are checked for equality first.
"""

import argparse
import time

import numpy as np

from rmsh import _kernels as kn


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000, help="database rows")
    ap.add_argument("--K", type=int, default=128, help="code length in bits")
    ap.add_argument("--queries", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    w = (args.K + 63) // 64
    db = rng.integers(0, 2**63, size=(args.n, w), dtype=np.uint64)
    qs = rng.integers(0, 2**63, size=(args.queries, w), dtype=np.uint64)
    dist = kn.hamming_distances_np(db, qs[0])
    order = rng.permutation(args.n)
    small = db[:2000, 0]

    cases = [
        ("hamming_distances", lambda f: f(db, qs[0])),
        ("hamming_matrix", lambda f: f(qs, db)),
        ("rank_by_distance", lambda f: f(dist, order, args.K)),
        ("min_pairwise_distance", lambda f: f(small)),
        ("greedy_scan(12, 3)", lambda f: f(12, 3)),
    ]
    print(f"N={args.n} K={args.K} queries={args.queries} numba_default={kn.NUMBA_ENABLED}")
    print(f"{'kernel':<24}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, call in cases:
        base = name.split("(")[0]
        f_np, f_nb = getattr(kn, base + "_np"), getattr(kn, base + "_nb")
        a, b = call(f_np), call(f_nb)  # warm-up and equality check
        assert np.array_equal(np.asarray(a), np.asarray(b)), f"{name}: paths disagree"
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<24}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
