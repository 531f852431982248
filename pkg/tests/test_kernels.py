"""Backend equivalence and correctness of the level-sweep kernels.

Core claims:
 - numba and numpy sweeps agree to 1e-12 on random and structured DAGs.
 - Both agree with a direct recursive evaluation of the min/max recursions.
 - Forward mass propagation matches a reference accumulation.
 - Repeat runs are bit-identical within a backend.
"""

import math

import numpy as np
import pytest

from shiftent.kernels import available_backends, forward_masses, logsumexp, sweep
from shiftent.trees import frequency, full_shift, random_pruned_tree, sft

BACKENDS = available_backends()
NEEDS_NUMBA = pytest.mark.skipif(
    "numba" not in BACKENDS, reason="numba not importable"
)


def reference_sweep(dag, w, mode):
    """Direct recursive evaluation, memoized per class."""
    f = {}
    lse = {}
    for c in range(dag.n_classes - 1, -1, -1):
        lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
        if lo == hi:
            f[c] = w[c]
            lse[c] = -math.inf
            continue
        vals = [f[int(dag.child_idx[e])] for e in range(lo, hi)]
        s = logsumexp(vals)
        lse[c] = s
        f[c] = min(w[c], s) if mode == "min" else max(w[c], s)
    n = dag.n_classes
    return (
        np.array([f[c] for c in range(n)]),
        np.array([lse[c] for c in range(n)]),
    )


def reference_forward(dag, route):
    agg = np.full(dag.n_classes, -np.inf)
    agg[0] = 0.0
    for c in range(dag.n_classes):
        if agg[c] == -np.inf:
            continue
        for e in range(int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])):
            ci = int(dag.child_idx[e])
            agg[ci] = np.logaddexp(agg[ci], agg[c] + route[e])
    return agg


def sample_dags():
    rng = np.random.default_rng(42)
    dags = [random_pruned_tree(rng, 2, 8).dag for _ in range(4)]
    dags.append(full_shift(3, 12).dag)
    dags.append(sft(2, 14, ["11"]).dag)
    dags.append(frequency((0.3, 0.7), 0.1, 14).dag)
    return dags


def weight_sets(dag, rng):
    depths = dag.class_depth.astype(float)
    yield -0.4 * depths
    yield -0.9 * (depths - 1.0)
    w = rng.normal(size=dag.n_classes)
    yield w
    w2 = w.copy()
    w2[depths < 3] = np.inf
    yield w2
    w3 = w.copy()
    w3[depths < 3] = -np.inf
    yield w3


class TestSweeps:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_against_reference(self, backend):
        rng = np.random.default_rng(1)
        for dag in sample_dags():
            for w in weight_sets(dag, rng):
                for mode, kill in (("min", np.inf), ("max", -np.inf)):
                    ww = w.copy()
                    # keep leaves finite so values stay well-defined
                    ww[dag.class_depth == dag.depth] = np.where(
                        np.isfinite(ww[dag.class_depth == dag.depth]),
                        ww[dag.class_depth == dag.depth],
                        -0.5,
                    )
                    ww[(dag.class_depth < dag.depth) & ~np.isfinite(ww)] = kill
                    f, lse = sweep(dag, ww, mode, backend=backend)
                    rf, rlse = reference_sweep(dag, ww, mode)
                    np.testing.assert_allclose(f, rf, rtol=0, atol=1e-12)
                    internal = dag.class_depth < dag.depth
                    np.testing.assert_allclose(
                        lse[internal], rlse[internal], rtol=0, atol=1e-12
                    )

    @NEEDS_NUMBA
    def test_backends_agree(self):
        for dag in sample_dags():
            w = -0.7 * (dag.class_depth.astype(float) - 1.0)
            for mode in ("min", "max"):
                f1, l1 = sweep(dag, w, mode, backend="numba")
                f2, l2 = sweep(dag, w, mode, backend="numpy")
                np.testing.assert_allclose(f1, f2, rtol=0, atol=1e-12)
                internal = dag.class_depth < dag.depth
                np.testing.assert_allclose(
                    l1[internal], l2[internal], rtol=0, atol=1e-12
                )

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_bit_identical_repeats(self, backend):
        dag = sft(2, 14, ["11"]).dag
        w = -0.3 * dag.class_depth.astype(float)
        f1, _ = sweep(dag, w, "min", backend=backend)
        f2, _ = sweep(dag, w, "min", backend=backend)
        assert np.array_equal(f1, f2)


class TestForward:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_against_reference(self, backend):
        rng = np.random.default_rng(5)
        for dag in sample_dags()[:5]:
            route = rng.normal(scale=0.3, size=dag.child_idx.shape[0])
            got = forward_masses(dag, route, backend=backend)
            want = reference_forward(dag, route)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)

    @NEEDS_NUMBA
    def test_backends_agree(self):
        dag = frequency((0.3, 0.7), 0.1, 14).dag
        rng = np.random.default_rng(6)
        route = rng.normal(scale=0.5, size=dag.child_idx.shape[0])
        a = forward_masses(dag, route, backend="numba")
        b = forward_masses(dag, route, backend="numpy")
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


class TestHelpers:
    def test_logsumexp(self):
        assert logsumexp([math.log(2), math.log(3)]) == pytest.approx(math.log(5))
        assert logsumexp([]) == -math.inf
        assert logsumexp([-math.inf, 0.0]) == pytest.approx(0.0)
