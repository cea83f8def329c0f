"""Kernel and algorithm timings.

Part one times each hot kernel with the numba and the numpy backend on the
same inputs.  Part two runs the analytical-versus-Jacobian benchmark with
both backends.  Setting ``GRIDSENSE_NUMBA=0`` only changes the default
backend; this script always loads both explicitly.

Usage: python3 benchmarks/bench_kernels.py [--repetitions N] [--sizes 20 50 100]
"""

import argparse
import time

import numpy as np

import gridsense as gs
from gridsense import _kernels
from gridsense._assembly import block_tree
from gridsense.baselines import benchmark
from gridsense.generate import random_feeder


def _time(fn, reps):
    fn()  # warm-up, also triggers numba compilation
    t = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter()
        fn()
        t[r] = time.perf_counter() - t0
    return 1e3 * t.mean()


def _kernel_calls(k, y, op):
    idx = y.index
    csr = y.csr_parts
    e = op.voltages
    tree = block_tree(y)
    d, up, lo = k.tree_assemble(*csr, e, idx.pq, idx.pq_position, tree.blk, tree.off, tree.parent)
    dinv, f, _ = k.tree_factor(d.copy(), up, lo, tree.size, tree.parent, tree.order)
    e_pq = e[idx.pq]
    return {
        "injected_currents": lambda: k.injected_currents(*csr, e),
        "sens_triplets": lambda: k.sens_triplets(*csr, e, idx.pq, idx.pq_position),
        "jac_dense": lambda: k.jac_dense(*csr, e, idx.pq, idx.pq_position),
        "tree_assemble": lambda: k.tree_assemble(*csr, e, idx.pq, idx.pq_position,
                                                 tree.blk, tree.off, tree.parent),
        "tree_factor": lambda: k.tree_factor(d.copy(), up, lo, tree.size, tree.parent, tree.order),
        "tree_unit_magnitudes": lambda: k.tree_unit_magnitudes(dinv, f, lo, tree.start, tree.size,
                                                               tree.parent, tree.order, e_pq),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repetitions", type=int, default=200)
    ap.add_argument("--sizes", type=int, nargs="*", default=[20, 50, 100])
    args = ap.parse_args(argv)

    backends = {"numpy": _kernels.get_backend("numpy")}
    if _kernels.numba_available():
        backends["numba"] = _kernels.get_backend("numba")

    cases = [(name, gs.load_network(name)) for name in ("ieee13_like", "ieee34_like")]
    cases += [(f"random_{n}", random_feeder(n, seed=7)) for n in args.sizes]

    print("kernel timings (ms per call)")
    print(f"{'feeder':<14}{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}")
    for name, net in cases:
        y = gs.build_compound_admittance(net)
        op = gs.solve_loadflow(net, y)
        calls = {b: _kernel_calls(k, y, op) for b, k in backends.items()}
        for kernel in calls["numpy"]:
            ms = {b: _time(c[kernel], args.repetitions) for b, c in calls.items()}
            line = f"{name:<14}{kernel:<24}" + "".join(f"{ms[b]:>12.4f}" for b in backends)
            if "numba" in ms:
                line += f"{ms['numpy'] / ms['numba']:>10.1f}"
            print(line)

    print("\nanalytical vs Jacobian (mean ms +/- 95% CI)")
    print(f"{'feeder':<14}{'backend':<8}{'jacobian':>20}{'analytical':>20}{'ratio':>8}")
    reps = max(30, args.repetitions)
    for name, net in cases:
        for b, k in backends.items():
            rep = benchmark(net, reps, kernels=k)
            print(f"{name:<14}{b:<8}"
                  f"{rep.jacobian_mean_ms:>12.4f} +/-{rep.jacobian_ci_ms:>6.4f}"
                  f"{rep.analytical_mean_ms:>12.4f} +/-{rep.analytical_ci_ms:>6.4f}"
                  f"{rep.ratio:>8.2f}")


if __name__ == "__main__":
    main()
