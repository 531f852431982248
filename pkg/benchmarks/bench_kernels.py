"""Benchmark the JIT and numpy kernel backends on the same workloads.

Runs the level-sweep and forward-mass kernels plus two end-to-end entropy
estimates on a set of representative trees, with warmup, and reports median
wall times per backend as a table and JSON. The numba backend is skipped
(and marked unavailable) when the import is missing or disabled via
SHIFTENT_NO_NUMBA=1.

Usage: python benchmarks/bench_kernels.py [--repeat 7] [--out bench.json]
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import time

import numpy as np

from shiftent.engines import _node_weights, bowen_entropy, packing_entropy
from shiftent.kernels import available_backends, forward_masses, sweep
from shiftent.trees import full_shift, random_pruned_tree, sft
from shiftent.verify import upper_density_tree


def workloads():
    rng = np.random.default_rng(2024)
    trees = {
        "full-shift-2-4096": full_shift(2, 4096),
        "golden-mean-4096": sft(2, 4096, forbidden=["11"]),
        "upper-density-4096": upper_density_tree(4096),
        "random-pruned-14": random_pruned_tree(rng, ell=3, depth=14,
                                               keep_prob=0.6),
    }
    out = []
    for name, tree in trees.items():
        dag = tree.dag
        weights = _node_weights(dag, 0.4, "cutset", "ball", 1, 1, 2)
        ratio = np.full(dag.child_idx.shape[0], math.log(0.5))
        out.append((f"sweep-min/{name}",
                    lambda b, dag=dag, w=weights: sweep(dag, w, "min", b)))
        out.append((f"sweep-max/{name}",
                    lambda b, dag=dag, w=weights: sweep(dag, w, "max", b)))
        out.append((f"forward-masses/{name}",
                    lambda b, dag=dag, r=ratio: forward_masses(dag, r, backend=b)))
    big = trees["upper-density-4096"]
    out.append(("bowen-entropy/upper-density-4096",
                lambda b: bowen_entropy(big, tol=1e-3, backend=b,
                                        diagnostics=False)))
    out.append(("packing-entropy/upper-density-4096",
                lambda b: packing_entropy(big, tol=1e-3, backend=b,
                                          diagnostics=False)))
    return out


def time_fn(fn, backend, repeat):
    fn(backend)  # warmup (includes JIT compilation for the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--out", default=None,
                        help="write the JSON results to this path")
    args = parser.parse_args(argv)

    backends = available_backends()
    results = {"backends": backends, "repeat": args.repeat, "rows": []}
    name_width = max(len(name) for name, _ in workloads())
    header = f"{'workload':<{name_width}}  " + "  ".join(
        f"{b:>12}" for b in backends)
    if "numba" in backends and "numpy" in backends:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, fn in workloads():
        row = {"workload": name, "median_seconds": {}}
        for backend in backends:
            row["median_seconds"][backend] = time_fn(fn, backend,
                                                     args.repeat)
        results["rows"].append(row)
        cells = "  ".join(
            f"{row['median_seconds'][b] * 1e3:>10.3f}ms" for b in backends)
        line = f"{name:<{name_width}}  {cells}"
        if "numba" in backends and "numpy" in backends:
            ratio = (row["median_seconds"]["numpy"]
                     / row["median_seconds"]["numba"])
            line += f"  {ratio:>7.2f}x"
        print(line)
    if "numba" not in backends:
        print("\nnumba backend unavailable (not installed or disabled "
              "via SHIFTENT_NO_NUMBA=1); timed numpy only")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"\nresults -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
