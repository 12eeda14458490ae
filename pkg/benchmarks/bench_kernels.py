"""Time the numba and numpy variants of each kernel on the same inputs.

    python benchmarks/bench_kernels.py [--n 5000] [--degree 50] [--repeat 20]

The numba timings exclude the first (compiling) call. Output is one line
per kernel with the median time of each path and the speed-up.
"""
import argparse
import statistics
import time

import numpy as np

from smtnet import kernels
from smtnet._accel import HAVE_NUMBA
from smtnet.graph import BlockModel, balanced_membership, sample_sbm


def _median_ms(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(1e3 * (time.perf_counter() - t0))
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--degree", type=float, default=50.0)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    n, k = args.n, args.k
    p = min(args.degree / (n - 1), 1.0)
    a = sample_sbm(BlockModel(balanced_membership(n, k), np.full((k, k), p)), 0)
    csr = a.csr
    indptr, indices = csr.indptr.astype(np.int64), csr.indices.astype(np.int64)
    rows, cols = kernels.csr_upper_edges_np(indptr, indices)
    labels = balanced_membership(n, k)
    x = np.random.default_rng(0).standard_normal(n)
    n_pairs = n * (n - 1) // 2
    idx = np.sort(np.random.default_rng(1).choice(n_pairs, size=min(n_pairs, 200_000), replace=False))

    cases = {
        "decode_upper_pairs": (idx, n),
        "block_edge_counts": (rows, cols, labels, k),
        "complement_matvec": (indptr, indices, x, 0.5),
        "csr_upper_edges": (indptr, indices),
    }
    print(f"n={n} edges={rows.size} numba={'yes' if HAVE_NUMBA else 'no'}")
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for name, call_args in cases.items():
        f_np = getattr(kernels, f"{name}_np")
        t_np = _median_ms(f_np, call_args, args.repeat)
        if HAVE_NUMBA:
            f_nb = getattr(kernels, f"{name}_nb")
            f_nb(*call_args)  # compile
            t_nb = _median_ms(f_nb, call_args, args.repeat)
            print(f"{name:<20} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<20} {t_np:>10.3f} {'n/a':>10} {'':>9}")


if __name__ == "__main__":
    main()
