"""Compare the compiled and pure-Python kernels.

Run ``python benchmarks/bench_kernels.py``; prints the median time per call
and the speedup for each kernel on a few graph sizes.
"""
import argparse
import statistics
import time

import numpy as np

from dglab._backend import available_backends, get_kernels
from dglab.calculus import upper_gradient
from dglab.space import complete_graph, grid_graph


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def bench_paths(kern, space, U, G):
    indptr, indices, eids = space.neighbor_csr
    return lambda: kern.max_path_violation(indptr, indices, eids, space.lengths, U, G, -1)


def bench_node_max(kern, space, vals):
    return lambda: kern.node_max(space.edge_a, space.edge_b, vals, space.n_nodes)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the fallback only")
    cases = []
    for n in (6, 7, 8):
        sp = complete_graph(n)
        U = rng.standard_normal((20, n))
        G = upper_gradient(sp, U)[0]
        cases.append((f"max_path_violation K{n} x20", lambda k, sp=sp, U=U, G=G: bench_paths(k, sp, U, G)))
    for side in (32, 128):
        sp = grid_graph(side, side)
        vals = np.ascontiguousarray(rng.random((50, sp.n_edges)))
        cases.append((f"node_max grid {side}x{side} x50", lambda k, sp=sp, v=vals: bench_node_max(k, sp, v)))
    print(f"{'kernel':<34}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, make in cases:
        times = [_time(make(get_kernels(b)), args.repeat) for b in backends]
        row = f"{name:<34}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
