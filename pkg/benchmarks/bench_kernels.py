"""Benchmark the compiled kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--quick]

Times the three hot paths (mixture forward, mixture backward, bit-packed
discrete evaluation) at training-like shapes and prints per-call timings
plus the speedup of the compiled extension.
"""

import argparse
import time

import numpy as np

from logicseq._kernels import numpy_backend
from logicseq.gates import TRUTH_TABLES_F

try:
    from logicseq._kernels import _fast
except ImportError:
    _fast = None


def _case(rng, batch, in_dim, width):
    x = np.ascontiguousarray(rng.random((batch, in_dim)))
    conn_a = rng.integers(0, in_dim, size=width).astype(np.uint32)
    conn_b = ((conn_a + 1 + rng.integers(0, in_dim - 1, size=width)) % in_dim).astype(
        np.uint32
    )
    mix = rng.dirichlet(np.ones(16), size=width)
    coeff = np.ascontiguousarray(mix @ TRUTH_TABLES_F)
    grad_y = np.ascontiguousarray(rng.normal(size=(batch, width)))
    return x, conn_a, conn_b, coeff, grad_y


def _packed_case(rng, in_dim, width, lanes):
    n_words = -(-lanes // 64)
    words = rng.integers(0, 2**63, size=(in_dim, n_words), dtype=np.int64).astype(
        np.uint64
    )
    conn_a = rng.integers(0, in_dim, size=width).astype(np.uint32)
    conn_b = ((conn_a + 1) % in_dim).astype(np.uint32)
    gates = rng.integers(0, 16, size=width).astype(np.uint8)
    mask = np.full(n_words, 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
    rem = lanes % 64
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return words, conn_a, conn_b, gates, mask


def timeit(fn, args, repeats):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller shapes, fewer reps")
    opts = ap.parse_args()

    rng = np.random.default_rng(0)
    if opts.quick:
        batch, in_dim, width, lanes, reps = 16, 512, 512, 256, 10
    else:
        batch, in_dim, width, lanes, reps = 64, 2048, 4096, 4096, 20

    rows = []
    x, ca, cb, coeff, gy = _case(rng, batch, in_dim, width)
    rows.append(
        (
            f"layer_forward  (batch={batch}, in={in_dim}, width={width})",
            timeit(numpy_backend.layer_forward, (x, ca, cb, coeff), reps),
            timeit(_fast.layer_forward, (x, ca, cb, coeff), reps) if _fast else None,
        )
    )
    rows.append(
        (
            f"layer_backward (batch={batch}, in={in_dim}, width={width})",
            timeit(numpy_backend.layer_backward, (x, ca, cb, coeff, gy), reps),
            timeit(_fast.layer_backward, (x, ca, cb, coeff, gy), reps)
            if _fast
            else None,
        )
    )
    words, pca, pcb, gates, mask = _packed_case(rng, in_dim, width, lanes)
    rows.append(
        (
            f"packed_eval    (in={in_dim}, width={width}, lanes={lanes})",
            timeit(numpy_backend.packed_eval, (words, pca, pcb, gates, mask), reps),
            timeit(_fast.packed_eval, (words, pca, pcb, gates, mask), reps)
            if _fast
            else None,
        )
    )

    print(f"{'kernel':<50} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, t_np, t_c in rows:
        if t_c is None:
            print(f"{name:<50} {t_np*1e3:>8.2f}ms {'n/a':>10} {'n/a':>8}")
        else:
            print(
                f"{name:<50} {t_np*1e3:>8.2f}ms {t_c*1e3:>8.2f}ms "
                f"{t_np/t_c:>7.1f}x"
            )
    if _fast is None:
        print("\ncompiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
