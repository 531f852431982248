"""Per-level dynamic-programming sweeps over a LayeredDag.

Two interchangeable backends compute the same sweeps:
 - "numba": JIT-compiled loops (default when numba imports cleanly),
 - "numpy": vectorized per-level segment reductions.
Set SHIFTENT_NO_NUMBA=1 to force the numpy backend process-wide; every kernel
also takes an explicit backend argument so benchmarks can compare the two in
one process. Within a backend the reduction order is fixed, so repeated runs
are bit-identical; across backends values agree to floating-point roundoff
(checked in tests at 1e-12).

The sweeps:
 - backward "min": f(c) = min(w(c), logsumexp of children f), the
   minimum-weight cutset recursion (also the max-flow recursion when w is a
   capacity),
 - backward "max": f(c) = max(w(c), logsumexp of children f), the
   maximum-weight antichain recursion,
 - forward mass propagation for proportional flow routing.
All values live in the log domain.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_FLAG = "SHIFTENT_NO_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "").strip() in ("", "0")


def available_backends() -> list:
    out = ["numpy"]
    try:
        import numba  # noqa: F401

        out.insert(0, "numba")
    except ImportError:
        pass
    return out


_DEFAULT = None


def default_backend() -> str:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = (
            "numba"
            if _numba_requested() and "numba" in available_backends()
            else "numpy"
        )
    return _DEFAULT


def logsumexp(values) -> float:
    """Stable log(sum(exp(values))) for a 1-d array or sequence."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return -math.inf
    m = float(np.max(arr))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(arr - m))))


def logdiffexp(a: float, b: float) -> float:
    """log(e^a - e^b) for a > b; -inf when they coincide to roundoff."""
    if b == -math.inf:
        return a
    if b >= a:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


# ---------------------------------------------------------------------------
# numba backend (compiled lazily on first use)
# ---------------------------------------------------------------------------

_NUMBA_FNS = None


def _numba_fns():
    global _NUMBA_FNS
    if _NUMBA_FNS is None:
        from numba import njit

        @njit(cache=True)
        def sweep_nb(level_ptr, child_ptr, child_idx, w, depth, is_min):
            n = w.shape[0]
            f = w.copy()
            lse = np.full(n, -np.inf)
            for d in range(depth - 1, -1, -1):
                for c in range(level_ptr[d], level_ptr[d + 1]):
                    lo = child_ptr[c]
                    hi = child_ptr[c + 1]
                    if hi == lo:
                        continue
                    m = -np.inf
                    for e in range(lo, hi):
                        v = f[child_idx[e]]
                        if v > m:
                            m = v
                    acc = 0.0
                    for e in range(lo, hi):
                        acc += np.exp(f[child_idx[e]] - m)
                    s = m + np.log(acc)
                    lse[c] = s
                    if is_min:
                        f[c] = w[c] if w[c] < s else s
                    else:
                        f[c] = w[c] if w[c] > s else s
            return f, lse

        @njit(cache=True)
        def forward_nb(level_ptr, child_ptr, child_idx, route, depth):
            n = child_ptr.shape[0] - 1
            agg = np.full(n, -np.inf)
            agg[0] = 0.0
            for d in range(depth):
                for c in range(level_ptr[d], level_ptr[d + 1]):
                    a = agg[c]
                    if a == -np.inf:
                        continue
                    for e in range(child_ptr[c], child_ptr[c + 1]):
                        t = a + route[e]
                        ci = child_idx[e]
                        x = agg[ci]
                        if x == -np.inf:
                            agg[ci] = t
                        else:
                            m = x if x > t else t
                            agg[ci] = m + np.log(np.exp(x - m) + np.exp(t - m))
            return agg

        _NUMBA_FNS = (sweep_nb, forward_nb)
    return _NUMBA_FNS


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _sweep_np(level_ptr, child_ptr, child_idx, w, depth, is_min):
    n = w.shape[0]
    f = w.copy()
    lse = np.full(n, -np.inf)
    for d in range(depth - 1, -1, -1):
        c0, c1 = int(level_ptr[d]), int(level_ptr[d + 1])
        e0, e1 = int(child_ptr[c0]), int(child_ptr[c1])
        if e0 == e1:
            continue
        vals = f[child_idx[e0:e1]]
        counts = np.diff(child_ptr[c0 : c1 + 1])
        starts = (child_ptr[c0:c1] - e0).astype(np.int64)
        segmax = np.maximum.reduceat(vals, starts)
        sums = np.add.reduceat(np.exp(vals - np.repeat(segmax, counts)), starts)
        seg = segmax + np.log(sums)
        lse[c0:c1] = seg
        if is_min:
            f[c0:c1] = np.minimum(w[c0:c1], seg)
        else:
            f[c0:c1] = np.maximum(w[c0:c1], seg)
    return f, lse


def _forward_np(level_ptr, child_ptr, child_idx, route, depth):
    n = child_ptr.shape[0] - 1
    agg = np.full(n, -np.inf)
    agg[0] = 0.0
    for d in range(depth):
        c0, c1 = int(level_ptr[d]), int(level_ptr[d + 1])
        e0, e1 = int(child_ptr[c0]), int(child_ptr[c1])
        if e0 == e1:
            continue
        counts = np.diff(child_ptr[c0 : c1 + 1])
        parents = np.repeat(np.arange(c0, c1, dtype=np.int64), counts)
        live = agg[parents] > -np.inf
        contrib = agg[parents[live]] + route[e0:e1][live]
        kids = child_idx[e0:e1][live]
        k0, k1 = c1, int(level_ptr[d + 2])
        local = kids - k0
        m = np.full(k1 - k0, -np.inf)
        np.maximum.at(m, local, contrib)
        acc = np.zeros(k1 - k0)
        np.add.at(acc, local, np.exp(contrib - m[local]))
        out = np.full(k1 - k0, -np.inf)
        pos = acc > 0.0
        out[pos] = m[pos] + np.log(acc[pos])
        agg[k0:k1] = out
    return agg


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _resolve(backend):
    b = backend or default_backend()
    if b not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {b!r}")
    if b == "numba" and "numba" not in available_backends():
        raise ValueError("numba backend requested but numba is not importable")
    return b


def sweep(dag, w: np.ndarray, mode: str, backend: str = None):
    """Backward DP over the dag; returns (f, lse_children) per class.

    mode "min" is the cutset/flow recursion, "max" the antichain recursion.
    Leaf classes keep f = w; every internal class combines its children by
    logsumexp and then applies min/max with its own weight.
    """
    if mode not in ("min", "max"):
        raise ValueError(f"sweep mode must be 'min' or 'max', got {mode!r}")
    is_min = mode == "min"
    b = _resolve(backend)
    args = (dag.level_ptr, dag.child_ptr, dag.child_idx,
            np.asarray(w, dtype=np.float64), dag.depth)
    if b == "numba":
        sweep_nb, _ = _numba_fns()
        return sweep_nb(*args, is_min)
    return _sweep_np(*args, is_min)


def forward_masses(dag, route: np.ndarray, depth: int = None, backend: str = None):
    """Forward log-mass propagation: agg(child) accumulates agg(parent) +
    route(edge) over all edges, starting from mass 1 at the root."""
    b = _resolve(backend)
    d = dag.depth if depth is None else depth
    args = (dag.level_ptr, dag.child_ptr, dag.child_idx,
            np.asarray(route, dtype=np.float64), d)
    if b == "numba":
        _, forward_nb = _numba_fns()
        return forward_nb(*args)
    return _forward_np(*args)
