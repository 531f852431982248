"""Entropy engines over layered cylinder trees.

All four quantities reduce to weighted node-selection problems on the tree,
with node weight e^(-s * exponent(depth)) and a depth window of admissible
nodes controlled by the horizon N and the radius exponent m ("scale"):

 - covering value ("min"): minimum total weight of a cutset, a node set whose
   cylinders cover every branch; in ball mode the exponent is depth - m
   (open balls of radius e^-m at horizon depth-m collapse to the node's
   cylinder) and nodes need depth >= N + m.
 - packing value ("max"): maximum total weight of an antichain of closed
   balls; exponent depth - m + 1, depth >= N + m - 1.
 - weighted cover: the fractional relaxation of the covering problem, solved
   as a max-flow with node capacities; on trees its optimum equals the
   minimum cutset weight exactly, which tests exploit as a dual route.
 - capacity: the best root-anchored growth slope of level counts.

Critical exponents are extracted by bisection against the gauge threshold
(ln value >= s*m for covers, >= s*(m-1) for packings). Comparing the ball
value to this constant-offset gauge instead of to 1 removes the finite-depth
bias: both thresholds are algebraically equivalent to "the same selection
problem with clopen weights e^(-s*depth) crosses 1", and on the full shift
the crossing sits exactly at ln(alphabet size) for every m and D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .kernels import default_backend, logsumexp, sweep
from .trees import CylinderTree
from .words import check_scale

TIE_EPS = 1e-12


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------


@dataclass
class SelectionEntry:
    depth: int
    class_id: int
    count: int  # exact node multiplicity of the class inside the selection
    log_weight: float  # per-node log weight


@dataclass
class CutsetResult:
    log_value: float
    s: float
    n_window: int
    scale: int
    mode: str
    selection: list = None  # SelectionEntry list; None when not extracted
    exact: Fraction = None

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

    def depth_histogram(self) -> dict:
        if self.selection is None:
            return {}
        hist = {}
        for e in self.selection:
            hist[e.depth] = hist.get(e.depth, 0) + e.count
        return hist


@dataclass
class AntichainResult(CutsetResult):
    pass


@dataclass
class FlowResult:
    log_value: float
    s: float
    n_window: int
    scale: int
    mode: str
    capacity_margin: float  # max over classes of (flow - capacity); <= 0

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


@dataclass
class RegularizedResult:
    log_value: float
    s: float
    n_window: int
    scale: int
    decomposition_depth: int
    ladder: dict  # partition depth -> log total packing value
    best_depth: int


@dataclass
class EntropyEstimate:
    value: float
    bracket: tuple
    mode: str
    depth: int
    n_window: int
    scale: int
    tol: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# weights and windows
# ---------------------------------------------------------------------------


def _window_start(kind: str, mode: str, n_window: int, scale: int) -> int:
    if mode == "ball":
        return n_window + scale if kind == "cutset" else n_window + scale - 1
    if mode == "clopen":
        return n_window
    raise DomainError(f"node weight mode must be 'ball' or 'clopen', got {mode!r}")


def _check_window(tree, kind, mode, n_window, scale):
    check_scale(scale)
    if n_window < 1:
        raise DomainError(f"window start n_window must be >= 1, got {n_window}")
    start = _window_start(kind, mode, n_window, scale)
    if start > tree.depth:
        raise DomainError(
            f"admissible depths start at {start} which exceeds the tree depth "
            f"{tree.depth}; lower n_window or the scale, or deepen the tree"
        )
    return start


def _exponents(kind: str, mode: str, scale: int, depths: np.ndarray) -> np.ndarray:
    if mode == "clopen":
        return depths.astype(np.float64)
    if kind == "cutset":
        return (depths - scale).astype(np.float64)
    return (depths - scale + 1).astype(np.float64)


def _node_weights(dag, s, kind, mode, n_window, scale, start):
    """Per-class log weight; inadmissible classes get the killing value."""
    depths = dag.class_depth
    logw = -s * _exponents(kind, mode, scale, depths)
    kill = math.inf if kind == "cutset" else -math.inf
    logw[depths < start] = kill
    return logw


def _gauge(kind: str, mode: str, s: float, scale: int) -> float:
    if mode == "clopen":
        return 0.0
    return s * scale if kind == "cutset" else s * (scale - 1)


# ---------------------------------------------------------------------------
# selection extraction
# ---------------------------------------------------------------------------


def _extract_selection(dag, w, f, lse, kind):
    """Walk down from the root, keeping classes whose own weight wins the DP
    comparison; returns SelectionEntry list with exact multiplicities."""
    depths = dag.class_depth
    active = {0: 1}
    out = []
    while active:
        nxt = {}
        for c, mult in sorted(active.items()):
            lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
            if lo == hi:
                # leaves carry their own weight in the DP, so an admissible
                # leaf is always selected
                take = True
            else:
                take = (
                    (w[c] <= lse[c] + TIE_EPS)
                    if kind == "cutset"
                    else (w[c] >= lse[c] - TIE_EPS)
                )
            if take and math.isfinite(w[c]):
                out.append(
                    SelectionEntry(
                        depth=int(depths[c]), class_id=int(c),
                        count=mult, log_weight=float(w[c]),
                    )
                )
                continue
            if lo == hi:
                raise DomainError(
                    "selection reached a leaf without an admissible node; "
                    "the depth window excludes the leaves"
                )
            for e in range(lo, hi):
                ci = int(dag.child_idx[e])
                nxt[ci] = nxt.get(ci, 0) + mult
        active = nxt
    return out


def _selection_log_total(selection) -> float:
    return logsumexp([math.log(e.count) + e.log_weight for e in selection])


# ---------------------------------------------------------------------------
# rational (exact) route
# ---------------------------------------------------------------------------


def _rational_values(dag, s, kind, mode, scale, start):
    """Exact per-class optimum with weights q^exponent, q = Fraction(e^-s)."""
    q = Fraction(math.exp(-s))
    depths = dag.class_depth
    vals = [None] * dag.n_classes
    for c in range(dag.n_classes - 1, -1, -1):
        d = int(depths[c])
        lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
        child_sum = None
        if lo < hi:
            child_sum = sum(vals[int(dag.child_idx[e])] for e in range(lo, hi))
        own = None
        if d >= start:
            exponent = int(_exponents(kind, mode, scale, np.array([d]))[0])
            own = q ** exponent
        if child_sum is None and own is None:
            raise DomainError(
                "selection reached a leaf without an admissible node; "
                "the depth window excludes the leaves"
            )
        if child_sum is None:
            vals[c] = own
        elif own is None:
            vals[c] = child_sum
        else:
            vals[c] = min(own, child_sum) if kind == "cutset" else max(own, child_sum)
    return vals[0]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def min_cutset_value(tree: CylinderTree, s: float, n_window: int = 1,
                     scale: int = 1, mode: str = "ball", backend: str = None,
                     rational: bool = False,
                     with_selection: bool = True) -> CutsetResult:
    """Minimum total weight over cutsets (cylinder covers of every branch).

    The reported log_value is recomputed from the extracted optimal selection
    (sum over selected classes of count * weight), which double-checks the DP;
    in rational mode the value is exact over the rationals.
    """
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    start = _check_window(tree, "cutset", mode, n_window, scale)
    dag = tree.dag
    w = _node_weights(dag, s, "cutset", mode, n_window, scale, start)
    f, lse = sweep(dag, w, "min", backend)
    selection = _extract_selection(dag, w, f, lse, "cutset") if with_selection else None
    if selection is not None:
        log_value = _selection_log_total(selection)
        if abs(log_value - float(f[0])) > 1e-9 * max(1.0, abs(float(f[0]))):
            raise AssertionError(
                f"cutset selection total {log_value} disagrees with DP root {f[0]}"
            )
    else:
        log_value = float(f[0])
    exact = None
    if rational:
        exact = _rational_values(dag, s, "cutset", mode, scale, start)
        log_value = _fraction_log(exact)
    return CutsetResult(log_value=log_value, s=s, n_window=n_window, scale=scale,
                        mode=mode, selection=selection, exact=exact)


def max_antichain_value(tree: CylinderTree, s: float, n_window: int = 1,
                        scale: int = 1, mode: str = "ball", backend: str = None,
                        rational: bool = False,
                        with_selection: bool = True) -> AntichainResult:
    """Maximum total weight over antichains (disjoint closed-ball packings)."""
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    start = _check_window(tree, "antichain", mode, n_window, scale)
    dag = tree.dag
    w = _node_weights(dag, s, "antichain", mode, n_window, scale, start)
    f, lse = sweep(dag, w, "max", backend)
    selection = (
        _extract_selection(dag, w, f, lse, "antichain") if with_selection else None
    )
    if selection is not None:
        log_value = _selection_log_total(selection)
        if abs(log_value - float(f[0])) > 1e-9 * max(1.0, abs(float(f[0]))):
            raise AssertionError(
                f"antichain selection total {log_value} disagrees with DP root {f[0]}"
            )
    else:
        log_value = float(f[0])
    exact = None
    if rational:
        exact = _rational_values(dag, s, "antichain", mode, scale, start)
        log_value = _fraction_log(exact)
    return AntichainResult(log_value=log_value, s=s, n_window=n_window, scale=scale,
                           mode=mode, selection=selection, exact=exact)


def _fraction_log(x: Fraction) -> float:
    if x <= 0:
        return -math.inf
    return math.log(x.numerator) - math.log(x.denominator)


def flow_arrays(tree: CylinderTree, s: float, n_window: int = 1, scale: int = 1,
                mode: str = "ball", backend: str = None):
    """Max-flow sweep with node capacities e^(-s(depth-m)) inside the window.

    Returns (capacities, flow, children_lse) per class; measures use these to
    route mass proportionally.
    """
    start = _check_window(tree, "cutset", mode, n_window, scale)
    dag = tree.dag
    cap = _node_weights(dag, s, "cutset", mode, n_window, scale, start)
    flow, lse = sweep(dag, cap, "min", backend)
    return cap, flow, lse


def weighted_cover_value(tree: CylinderTree, s: float, n_window: int = 1,
                         scale: int = 1, mode: str = "ball",
                         backend: str = None) -> FlowResult:
    """Optimal total mass of a fractional cover (equivalently, the maximum
    flow from the root through capacity-limited admissible nodes)."""
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    cap, flow, _ = flow_arrays(tree, s, n_window, scale, mode, backend)
    finite = np.isfinite(cap)
    margin = float(np.max(flow[finite] - cap[finite])) if finite.any() else -math.inf
    return FlowResult(log_value=float(flow[0]), s=s, n_window=n_window,
                      scale=scale, mode=mode, capacity_margin=margin)


def packing_regularized(tree: CylinderTree, s: float, n_window: int = 1,
                        scale: int = 1, mode: str = "ball",
                        decomposition_depth: int = None,
                        backend: str = None) -> RegularizedResult:
    """Packing value regularized over subtree decompositions.

    The tree is split into the subtrees rooted at depth d', the per-part
    packing values (antichains inside each part) are summed, and the minimum
    over d' in {0, ..., decomposition_depth} is returned; d' = 0 is the plain
    whole-tree packing value. Merging parts along the tree cannot beat this
    ladder because the packing value of a disjoint union of subtrees is the
    sum of the per-subtree values. When the decomposition depth stays at or
    below the admissible window start the ladder is constant; partitions cut
    strictly below shallow admissible nodes are what make the regularized
    value drop below the plain packing value.
    """
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    start = _check_window(tree, "antichain", mode, n_window, scale)
    dag = tree.dag
    if decomposition_depth is None:
        decomposition_depth = min(start, tree.depth)
    if not 0 <= decomposition_depth <= tree.depth:
        raise DomainError(
            f"decomposition depth {decomposition_depth} outside 0..{tree.depth}"
        )
    w = _node_weights(dag, s, "antichain", mode, n_window, scale, start)
    g, _ = sweep(dag, w, "max", backend)
    log_count = dag.log_count
    ladder = {}
    for d in range(decomposition_depth + 1):
        cls = list(dag.classes_at(d))
        ladder[d] = logsumexp([log_count[c] + float(g[c]) for c in cls])
    best_depth = min(ladder, key=lambda d: (ladder[d], d))
    return RegularizedResult(
        log_value=ladder[best_depth], s=s, n_window=n_window, scale=scale,
        decomposition_depth=decomposition_depth, ladder=ladder,
        best_depth=best_depth,
    )


# ---------------------------------------------------------------------------
# critical exponents
# ---------------------------------------------------------------------------


def _bisect(predicate, tree, tol):
    """Standard bisection of a monotone predicate on s >= 0."""
    lo = 0.0
    if not predicate(lo):
        raise AssertionError("selection value below 1 node at s=0; tree invariant broken")
    hi = math.log(tree.alphabet.size) + tol
    guard = 0
    while predicate(hi):
        hi += 0.25
        guard += 1
        if guard > 40:
            raise AssertionError("no upper bracket found for the critical exponent")
    evaluations = guard + 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
        evaluations += 1
    return lo, hi, evaluations


def _cutset_root(tree, s, n_window, scale, mode, backend):
    start = _check_window(tree, "cutset", mode, n_window, scale)
    dag = tree.dag
    w = _node_weights(dag, s, "cutset", mode, n_window, scale, start)
    f, _ = sweep(dag, w, "min", backend)
    return float(f[0])


def bowen_entropy(tree: CylinderTree, n_window: int = None, scale: int = 1,
                  tol: float = 1e-3, mode: str = "ball", backend: str = None,
                  diagnostics: bool = True) -> EntropyEstimate:
    """Critical exponent of the covering (cutset) value.

    Bisection on "ln min-cutset value >= gauge(s)" with gauge s*m in ball
    mode; the default window start n_window is floor(D/2).
    """
    if n_window is None:
        n_window = max(1, tree.depth // 2)
    backend = backend or default_backend()

    def predicate(s):
        return _cutset_root(tree, s, n_window, scale, mode, backend) >= _gauge(
            "cutset", mode, s, scale
        ) - TIE_EPS

    lo, hi, evals = _bisect(predicate, tree, tol)
    diag = {"backend": backend, "predicate_evaluations": evals}
    if diagnostics:
        window_estimates = {}
        for nw in sorted({1, max(1, tree.depth // 4), max(1, tree.depth // 2)}):
            if _window_start("cutset", mode, nw, scale) > tree.depth:
                continue
            if nw == n_window:
                window_estimates[nw] = 0.5 * (lo + hi)
                continue

            def pred_nw(s, nw=nw):
                return _cutset_root(tree, s, nw, scale, mode, backend) >= _gauge(
                    "cutset", mode, s, scale
                ) - TIE_EPS

            wlo, whi, _ = _bisect(pred_nw, tree, tol)
            window_estimates[nw] = 0.5 * (wlo + whi)
        diag["window_estimates"] = window_estimates
        sel = min_cutset_value(tree, 0.5 * (lo + hi), n_window, scale, mode, backend)
        diag["selection_depth_histogram"] = {
            str(k): v for k, v in sorted(sel.depth_histogram().items())
        }
    return EntropyEstimate(value=0.5 * (lo + hi), bracket=(lo, hi), mode="bowen",
                           depth=tree.depth, n_window=n_window, scale=scale,
                           tol=tol, converged=True, diagnostics=diag)


def packing_entropy(tree: CylinderTree, n_window: int = None, scale: int = 1,
                    tol: float = 1e-3, mode: str = "ball",
                    decomposition_depth: int = None, backend: str = None,
                    diagnostics: bool = True) -> EntropyEstimate:
    """Critical exponent of the regularized packing value.

    Bisection on "ln regularized packing value >= gauge(s)" with gauge
    s*(m-1) in ball mode.
    """
    if n_window is None:
        n_window = max(1, tree.depth // 2)
    backend = backend or default_backend()

    def predicate(s):
        reg = packing_regularized(tree, s, n_window, scale, mode,
                                  decomposition_depth, backend)
        return reg.log_value >= _gauge("antichain", mode, s, scale) - TIE_EPS

    lo, hi, evals = _bisect(predicate, tree, tol)
    diag = {"backend": backend, "predicate_evaluations": evals}
    if diagnostics:
        reg = packing_regularized(tree, 0.5 * (lo + hi), n_window, scale, mode,
                                  decomposition_depth, backend)
        diag["ladder"] = {str(k): v for k, v in sorted(reg.ladder.items())}
        diag["best_decomposition_depth"] = reg.best_depth
    return EntropyEstimate(value=0.5 * (lo + hi), bracket=(lo, hi), mode="packing",
                           depth=tree.depth, n_window=n_window, scale=scale,
                           tol=tol, converged=True, diagnostics=diag)


def weighted_entropy(tree: CylinderTree, n_window: int = None, scale: int = 1,
                     tol: float = 1e-3, mode: str = "ball",
                     backend: str = None) -> EntropyEstimate:
    """Critical exponent of the weighted (fractional) cover value.

    Tree duality makes the fractional optimum equal the integral cutset
    optimum, so this bracket agrees with the covering entropy; it is kept as
    an independent route (max flow instead of the min-selection sweep).
    """
    if n_window is None:
        n_window = max(1, tree.depth // 2)

    def predicate(s):
        res = weighted_cover_value(tree, s, n_window, scale, mode, backend)
        return res.log_value >= _gauge("cutset", mode, s, scale) - TIE_EPS

    lo, hi, evals = _bisect(predicate, tree, tol)
    return EntropyEstimate(
        value=0.5 * (lo + hi), bracket=(lo, hi), mode="weighted",
        depth=tree.depth, n_window=n_window, scale=scale, tol=tol,
        converged=True,
        diagnostics={"predicate_evaluations": evals},
    )


def capacity_entropy(tree: CylinderTree, n_window: int = None,
                     scale: int = 1) -> EntropyEstimate:
    """Best root-anchored growth slope max_d ln(node count at depth d) / d.

    Separated sets at horizon n and radius e^-m are exactly the depth
    n+m-1 cylinders of the tree, and the same cylinders also span the set at
    that radius, so the separated-set and spanning-set routes coincide; the
    admissible depths are d in [n_window + m - 1, D].
    """
    check_scale(scale)
    if n_window is None:
        n_window = max(1, tree.depth // 2)
    if n_window < 1:
        raise DomainError(f"window start n_window must be >= 1, got {n_window}")
    start = n_window + scale - 1
    if start > tree.depth:
        raise DomainError(
            f"admissible depths start at {start} which exceeds the tree depth "
            f"{tree.depth}; lower n_window or the scale, or deepen the tree"
        )
    dag = tree.dag
    log_count = dag.log_count
    rates = {}
    for d in range(start, tree.depth + 1):
        level_total = logsumexp([log_count[c] for c in dag.classes_at(d)])
        rates[d] = level_total / d
    best_depth = max(rates, key=lambda d: (rates[d], -d))
    value = rates[best_depth]
    return EntropyEstimate(
        value=value, bracket=(value, value), mode="capacity", depth=tree.depth,
        n_window=n_window, scale=scale, tol=0.0, converged=True,
        diagnostics={"level_rates": {str(d): r for d, r in sorted(rates.items())},
                     "best_depth": best_depth},
    )


# ---------------------------------------------------------------------------
# Vitali selection
# ---------------------------------------------------------------------------

DILATION_GRID_STEPS = 2  # e^2 > 5, so dilating by 5 stays inside two grid steps


@dataclass
class VitaliResult:
    selected: list  # indices into the input ball list
    factor1_ok: bool  # ultrametric tightening: every ball inside a selected ball
    factor5_ok: bool  # classical guarantee: inside a 5x-dilated selected ball


def vitali_select(balls) -> VitaliResult:
    """Greedy disjoint subfamily, largest radius first.

    Closed time-n balls are cylinders, so two balls are disjoint exactly when
    their defining words are prefix-incomparable. The classical covering
    guarantee (every input ball lies in some selected ball dilated by 5) is
    checked on the e^(-k) radius grid via 2 grid steps; on an ultrametric the
    selected balls already cover undilated, which factor1_ok reports.
    """
    if not balls:
        raise DomainError("vitali_select needs at least one ball")
    cylinders = [b.cylinder() for b in balls]
    order = sorted(range(len(balls)), key=lambda i: (balls[i].scale, cylinders[i]))

    def comparable(u, v):
        k = min(len(u), len(v))
        return u[:k] == v[:k]

    selected = []
    for i in order:
        if all(not comparable(cylinders[i], cylinders[j]) for j in selected):
            selected.append(i)

    def covered(i, dilation_steps):
        for j in selected:
            keep = max(len(cylinders[j]) - dilation_steps, 0)
            if cylinders[i][:keep] == cylinders[j][:keep]:
                return True
        return False

    factor1 = all(covered(i, 0) for i in range(len(balls)))
    factor5 = all(covered(i, DILATION_GRID_STEPS) for i in range(len(balls)))
    return VitaliResult(selected=selected, factor1_ok=factor1, factor5_ok=factor5)
