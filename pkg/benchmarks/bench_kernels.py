"""Time the numba and pure-numpy local SGD kernels on the same workload.

    python benchmarks/bench_kernels.py --samples 2000 --features 10 --epochs 20
"""
import argparse
import time

import numpy as np

from fedsel import kernels
from fedsel.model import logistic, mlp


def bench(arch, x, y, batch_size, epochs, use_numba, lr=0.1):
    params = np.zeros(arch.n_params)
    rng = np.random.default_rng(0)
    n_batches = -(-x.shape[0] // batch_size)
    started = time.perf_counter()
    for _ in range(epochs):
        kernels.sgd_steps(arch, params, x, y, rng.permutation(x.shape[0]), 0, n_batches, batch_size, lr,
                          use_numba=use_numba)
    return time.perf_counter() - started, params


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--features", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(1)
    x = rng.normal(size=(args.samples, args.features))
    y = (x[:, 0] + 0.5 * rng.normal(size=args.samples) > 0).astype(np.float64)
    print(f"{args.samples} samples x {args.features} features, batch {args.batch_size}, {args.epochs} epochs")
    for arch in (logistic(args.features), mlp(args.features, args.hidden)):
        t_np, p_np = bench(arch, x, y, args.batch_size, args.epochs, use_numba=False)
        if not kernels.HAVE_NUMBA:
            print(f"{arch.kind:8s} numpy {t_np:.3f}s  (numba unavailable or disabled)")
            continue
        bench(arch, x[:32], y[:32], args.batch_size, 1, use_numba=True)  # compile outside the timer
        t_nb, p_nb = bench(arch, x, y, args.batch_size, args.epochs, use_numba=True)
        diff = np.max(np.abs(p_np - p_nb))
        print(f"{arch.kind:8s} numpy {t_np:.3f}s  numba {t_nb:.3f}s  speedup {t_np / t_nb:5.1f}x  "
              f"max |param diff| {diff:.1e}")


if __name__ == "__main__":
    main()
