"""Benchmark the max-product message passing kernels.

Compares the compiled extension (lccad._lbp_fast) against the pure-numpy
reference (lccad._lbp_ref) on random grid problems, and checks that both
produce bit-identical messages and beliefs while timing them.

Usage:
    python benchmarks/bench_lbp.py
    python benchmarks/bench_lbp.py --sizes 20x30,60x90 --states 4 --repeats 5
"""

import argparse
import time

import numpy as np

from lccad._lbp_ref import run_max_product as run_python
from lccad.data import grid_graph

try:
    from lccad._lbp_fast import run_max_product as run_compiled
except ImportError:
    run_compiled = None


def parse_sizes(text):
    sizes = []
    for token in text.split(","):
        h, _, w = token.strip().partition("x")
        sizes.append((int(h), int(w)))
    return sizes


def bench(kernel, args, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = kernel(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="10x15,20x30,40x60,80x120",
                        help="comma-separated HxW grid sizes")
    parser.add_argument("--states", type=int, default=3, help="states per node")
    parser.add_argument("--iters", type=int, default=100, help="sweep cap")
    parser.add_argument("--repeats", type=int, default=3,
                        help="repeats per kernel (best time wins)")
    parser.add_argument("--seed", type=int, default=0)
    opts = parser.parse_args()

    if run_compiled is None:
        print("compiled kernel not built; timing the pure-python kernel only")
    rng = np.random.default_rng(opts.seed)
    k = opts.states

    print(f"{'grid':>10} {'nodes':>7} {'edges':>7} "
          f"{'python':>10} {'compiled':>10} {'speedup':>8}  parity")
    for h, w in parse_sizes(opts.sizes):
        graph = grid_graph(h, w)
        node = rng.standard_normal((graph.num_nodes, k))
        edge = rng.standard_normal((k, k))
        src, dst = graph.directed_edges()
        args = (node, edge, src, dst, opts.iters, 0.5, 1e-8, True)

        t_py, ref = bench(run_python, args, opts.repeats)
        if run_compiled is None:
            print(f"{f'{h}x{w}':>10} {graph.num_nodes:>7} {graph.num_edges:>7} "
                  f"{t_py * 1e3:>9.2f}ms {'-':>10} {'-':>8}")
            continue
        t_c, fast = bench(run_compiled, args, opts.repeats)
        same = (
            np.array_equal(ref[0], fast[0])
            and np.array_equal(ref[1], fast[1])
            and ref[2:] == fast[2:]
        )
        print(f"{f'{h}x{w}':>10} {graph.num_nodes:>7} {graph.num_edges:>7} "
              f"{t_py * 1e3:>9.2f}ms {t_c * 1e3:>8.2f}ms "
              f"{t_py / t_c:>7.1f}x  {'bitwise' if same else 'MISMATCH'}")


if __name__ == "__main__":
    main()
