"""Compare the compiled and numpy kernel backends on the shapes the agents use.

    python benchmarks/bench_kernels.py [--repeat 20] [--dim 21] [--window 200] [--candidates 512]

Each row reports the best wall time per call over the repeats (the two
backends are interleaved so background load hits both alike) and the
speed-up of the compiled backend.  The last row times a whole agent
decision (Gram factorization plus scoring every candidate) at the given
window size.
"""

import argparse
import time

import numpy as np

from aoigpr import kernels
from aoigpr.gpr import KernelHyperparams, Sample, SlidingDataset, gram


def once(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def cases(args, rng):
    X = rng.uniform(-1, 1, size=(args.window, args.dim))
    C = rng.uniform(-1, 1, size=(args.candidates, args.dim))
    th = KernelHyperparams(h=10.0, lam=1.0, nu=0.5, sigma_j=0.03)
    ds = SlidingDataset(args.window)
    for x in X:
        ds.push(Sample(x, float(rng.uniform(0, 30))))

    def decision():
        gram(ds, th).predict_many(C)

    return [
        (f"pairwise_dist {args.window}x{args.window}", lambda: kernels.pairwise_dist(X, X)),
        (f"gram nu=0.5 {args.window}x{args.window}",
         lambda: kernels.matern_cross(X, X, 10.0, 1.0, 0.5)),
        (f"cross nu=2.5 {args.candidates}x{args.window}",
         lambda: kernels.matern_cross(C, X, 10.0, 1.0, 2.5)),
        (f"cross nu=1.2 {args.candidates}x{args.window} (scipy kv)",
         lambda: kernels.matern_cross(C, X, 10.0, 1.0, 1.2)),
        (f"decision M={args.window} S={args.candidates}", decision),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dim", type=int, default=21, help="input dimension (1 + N resource blocks)")
    ap.add_argument("--window", type=int, default=200)
    ap.add_argument("--candidates", type=int, default=512)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    active = kernels.BACKEND
    suite = cases(args, np.random.default_rng(0))
    best = {b: [float("inf")] * len(suite) for b in backends}
    try:
        for _ in range(args.repeat + 1):  # the first pass is a warm-up
            for i, (_, fn) in enumerate(suite):
                for b in backends:
                    kernels.use_backend(b)
                    best[b][i] = min(best[b][i], once(fn))
    finally:
        kernels.use_backend(active)
    results = {b: [(label, t) for (label, _), t in zip(suite, best[b])] for b in backends}

    labels = [label for label, _ in results["numpy"]]
    width = max(map(len, labels))
    head = f"{'case':{width}s}  " + "  ".join(f"{b:>10s}" for b in backends)
    if "cython" in results:
        head += "   speed-up"
    print(head)
    for i, label in enumerate(labels):
        row = f"{label:{width}s}  " + "  ".join(f"{1e3 * results[b][i][1]:8.3f}ms" for b in backends)
        if "cython" in results:
            row += f"   {results['numpy'][i][1] / results['cython'][i][1]:8.2f}x"
        print(row)
    if "cython" not in results:
        print("compiled backend not built; only numpy was timed")


if __name__ == "__main__":
    main()
