"""Compiled versus pure-Python kernels, and the assembly variants.

    python benchmarks/run_benchmarks.py [--sizes 4 8 12] [--repeats 3]

Prints best-of-repeats wall times.  Rankings, not absolute numbers, are the
point: timings depend on the machine.
"""
import argparse
import math
import time

import numpy as np

from fracfem import _kernels
from fracfem.bench import backend_comparison, ranking_checks, run_benchmark
from fracfem.mesh import generate_ball_mesh


def best_of(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def trace_rate(mesh, backend, n=2000, seed=42):
    """Paths per second from random simplex centroids."""
    k = _kernels.get_backend(backend)
    rng = np.random.default_rng(seed)
    ids = rng.integers(mesh.num_simplices, size=n)
    cents = mesh.vertices[mesh.simplices[ids]].mean(axis=1)
    arrays = mesh.kernel_arrays

    def go():
        for e, x in zip(ids, cents):
            k.trace(arrays, int(e), x, 0, 0)
    return n / best_of(go, 1)


def weight_rate(backend, n=200_000):
    k = _kernels.get_backend(backend)
    rg = 1.0 / math.gamma(0.3)

    def go():
        for i in range(n):
            k.segment_weights(0.7, rg, 0.01 * (i % 50), 0.6)
    return n / best_of(go, 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 12])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    print(f"backends available: {', '.join(_kernels.available_backends())} "
          f"(active: {_kernels.BACKEND})")
    ball = generate_ball_mesh(12)
    print("\nkernel throughput")
    for name in _kernels.available_backends():
        print(f"  {name:>9}: {trace_rate(ball, name):10.0f} paths/s on {ball.num_simplices} tets, "
              f"{weight_rate(name):10.0f} segment weights/s")
    ne, times = backend_comparison(N=3)
    print(f"\nfractional assembly, cube with {ne} tetrahedra")
    for name, sec in times.items():
        print(f"  {name:>9}: {sec:.3f}s")
    if len(times) == 2:
        print(f"  speed-up: {times['python'] / times['compiled']:.0f}x")

    print("\nassembly variants (best of %d)" % args.repeats)
    rows = run_benchmark(args.sizes, repeats=args.repeats)
    print(f"  {'elements':>8} {'variant':>20} {'seconds':>9} {'nnz':>9}")
    for r in rows:
        print(f"  {r.elements:8d} {r.variant:>20} {r.seconds:9.3f} {r.nnz:9d}")
    for k, v in ranking_checks(rows).items():
        print(f"  {k}: {v}")


if __name__ == "__main__":
    main()
