"""Time the numba and pure-numpy paths of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The first numba call (compilation, or a cache load) is excluded. Both paths
are checked to agree before timing.
"""

import argparse
import time

import numpy as np

from pairclust import kernels
from pairclust.network import softmax
from pairclust.pairs import enumerate_pairs


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # one dense batch of 256 samples over 10 and 100 clusters
    for m in (10, 100):
        probs = softmax(rng.normal(scale=2.0, size=(256, m)))
        first, second = enumerate_pairs(256)
        labels = rng.integers(0, 2, len(first)).astype(np.int8)
        yield (f"pair_kl_terms B=256 M={m}", kernels.pair_kl_terms,
               (probs, np.log(probs), first, second, labels, 2.0))
    for n in (10, 100, 300):
        yield f"min_cost_assignment {n}x{n}", kernels.min_cost_assignment, (rng.random((n, n)),)
    first, _ = enumerate_pairs(256)
    rows = rng.normal(size=(len(first), 256))
    yield ("scatter_add_rows 32640x256 -> 256", kernels.scatter_add_rows,
           (np.zeros((256, 256)), first, rows))


def check(name, a, b):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            check(name, x, y)
    elif not np.allclose(a, b, rtol=1e-9, atol=1e-12) and "assignment" not in name:
        raise AssertionError(f"{name}: paths disagree")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn, inputs in cases(rng):
        fresh = lambda: [x.copy() if isinstance(x, np.ndarray) else x for x in inputs]  # noqa: E731
        check(name, fn.numba_impl(*fresh()), fn.numpy_impl(*fresh()))
        t_nb = best_of(fn.numba_impl, fresh(), args.repeat)
        t_np = best_of(fn.numpy_impl, fresh(), args.repeat)
        print(f"{name:40s} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
