"""Cylinder measures, local entropies at finite scale, and the two Frostman
constructions.

A measure here is an additive assignment of mass to tree nodes (cylinder
sets), normalized variants being probability measures on the tree boundary.
Three concrete representations:

 - RatioMeasure: a flow on the class dag given by per-edge conditional
   probabilities (Bernoulli, Markov, and normalized max-flow measures).
 - NodeMeasure: explicit per-node masses, validated for additivity; the
   serialization target.
 - StageMeasure: the staged antichain refinement used to witness packing
   entropy from below; masses live on nested antichain selections.

Local entropy values are v_n = -(1/n) ln mass(x[1..n+m]) with the open-ball
convention (ball of order n and radius e^-m = cylinder of length n+m).
Finite-horizon liminf/limsup estimates are min/max over the final third of
the n-window; transient small-n effects dominate otherwise.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .engines import flow_arrays
from .errors import DomainError
from .kernels import forward_masses, logdiffexp, logsumexp
from .trees import (
    AutomatonRule,
    AutomatonTree,
    CylinderTree,
    ExplicitTree,
    tree_from_json_obj,
    tree_to_json_obj,
)
from .words import Word, check_scale, word_from_string, word_to_string

MEASURE_SCHEMA_VERSION = 1
DEFAULT_PATH_BUDGET = 420_000

# Product over n >= 1 of (1 + 2^-n); bounds every stage mass against the
# plain antichain weight in the packing construction.
PACKING_CONSTANT_LOG = sum(math.log1p(2.0 ** -n) for n in range(1, 60))
PACKING_CONSTANT = math.exp(PACKING_CONSTANT_LOG)


def _log_big(n) -> float:
    return math.log(n) if n > 0 else -math.inf


def _exact_prob_normalize(p: np.ndarray) -> np.ndarray:
    """Scale a positive vector so its float sum is exactly 1.0.

    After dividing by the total, the ulp-level residual is folded into a
    single entry, trying each position in turn until the sum lands on 1.0
    bit for bit (a fixed target index can oscillate between two rounding
    states). If no single-entry adjustment registers, the vector is returned
    off by a few ulps, which the rational boundary normalization absorbs.
    """
    total = p.sum()
    if not (total > 0):
        raise DomainError("probability vector has no positive mass")
    q = p / total
    if q.sum() == 1.0:
        return q
    for idx in np.argsort(q)[::-1]:
        trial = q.copy()
        for _ in range(8):
            r = 1.0 - trial.sum()
            if r == 0.0:
                return trial
            t = trial[idx] + r
            if not (t > 0.0) or t == trial[idx]:
                break
            trial[idx] = t
    return q


def _tail_start(n_max: int) -> int:
    return n_max - max(1, n_max // 3) + 1


# ---------------------------------------------------------------------------
# measure interface
# ---------------------------------------------------------------------------


class CylinderMeasure:
    """Additive node masses on a pruned cylinder tree."""

    name = "measure"

    def __init__(self, tree: CylinderTree, params: dict = None,
                 is_probability: bool = True, renormalized: bool = False):
        self.tree = tree
        self.params = dict(params or {})
        self.is_probability = is_probability
        self.renormalized = renormalized

    def mass_log(self, word: Word) -> float:
        raise NotImplementedError

    def mass(self, word: Word) -> float:
        return math.exp(self.mass_log(word))

    def prefix_mass_logs(self, word: Word) -> np.ndarray:
        """Log masses of all prefixes of `word`, root included."""
        out = np.empty(len(word) + 1)
        for i in range(len(word) + 1):
            out[i] = self.mass_log(word[:i])
        return out

    def boundary_mass(self) -> float:
        """Total mass carried by the full-depth nodes."""
        depth = self.tree.depth
        words = [w for w in self.tree.materialize_words() if len(w) == depth]
        return float(sum(self.mass(w) for w in words))

    def sample_branch(self, rng, depth: int = None) -> Word:
        raise DomainError(
            f"{self.name} measures do not support branch sampling"
        )

    def describe(self) -> dict:
        return {
            "kind": self.name,
            "params": dict(self.params),
            "is_probability": self.is_probability,
            "renormalized": self.renormalized,
        }


class RatioMeasure(CylinderMeasure):
    """Flow measure on the class dag: per-edge conditional probabilities.

    Node mass is the product of edge probabilities along the node's path
    (times the root mass), so nodes of one class may carry different masses
    when their ancestor class sequences differ; per-class aggregates are
    still exact via a forward pass.
    """

    def __init__(self, tree, edge_prob: np.ndarray, name: str,
                 params: dict = None, is_probability: bool = True,
                 renormalized: bool = False, root_log: float = 0.0):
        super().__init__(tree, params, is_probability, renormalized)
        self.name = name
        self.edge_prob = np.asarray(edge_prob, dtype=np.float64)
        with np.errstate(divide="ignore"):
            self.edge_ratio = np.log(self.edge_prob)
        self.root_log = float(root_log)
        self._dag = tree.dag
        self._agg = None
        self._sample_cache = {}
        self._boundary_cached = None

    def _edge_pos(self, c: int, sym: int):
        dag = self._dag
        lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
        pos = lo + int(np.searchsorted(dag.child_sym[lo:hi], sym))
        if pos < hi and dag.child_sym[pos] == sym:
            return pos, int(dag.child_idx[pos])
        return None, None

    def mass_log(self, word: Word) -> float:
        acc = self.root_log
        c = 0
        for sym in word:
            pos, c = self._edge_pos(c, int(sym))
            if pos is None:
                return -math.inf
            acc += self.edge_ratio[pos]
            if acc == -math.inf:
                return acc
        return acc

    def prefix_mass_logs(self, word: Word) -> np.ndarray:
        out = np.empty(len(word) + 1)
        out[0] = self.root_log
        acc = self.root_log
        c = 0
        for i, sym in enumerate(word):
            pos, c = self._edge_pos(c, int(sym))
            if pos is None:
                out[i + 1:] = -math.inf
                return out
            acc += self.edge_ratio[pos]
            out[i + 1] = acc
        return out

    def class_mass_logs(self) -> np.ndarray:
        """Aggregated log mass per class (sum over the class's nodes)."""
        if self._agg is None:
            self._agg = self.root_log + forward_masses(
                self._dag, self.edge_ratio
            )
        return self._agg

    def _boundary_fraction(self) -> Fraction:
        """Exact total of edge-probability products over boundary nodes.

        Floats are exact rationals, so the telescoping sum over childless
        classes is computable without rounding."""
        dag = self._dag
        masses = {0: Fraction(1)}
        leaf_total = Fraction(0)
        for c in range(dag.n_classes):
            m = masses.pop(c, None)
            if m is None or m == 0:
                continue
            lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
            if lo == hi:
                leaf_total += m
                continue
            for pos in range(lo, hi):
                p = self.edge_prob[pos]
                if p == 0.0:
                    continue
                k = int(dag.child_idx[pos])
                masses[k] = masses.get(k, Fraction(0)) + m * Fraction(p)
        return leaf_total

    def boundary_mass(self) -> float:
        """Total mass of the boundary (the full-depth cylinders).

        A probability flow is the path-product measure divided by its exact
        boundary total, so this returns exactly 1.0; the sub-1e-14
        normalization is absorbed by the float rounding of the node masses
        themselves. The exact rational total is still computed here, both to
        verify the flow really telescopes to 1 within float tolerance and to
        report the true total for non-probability flows."""
        if self._boundary_cached is None:
            total = self._boundary_fraction()
            if self.is_probability:
                if total == 0 or abs(float(total) - 1.0) > 1e-9:
                    raise DomainError(
                        "flow normalization drifted: boundary products sum "
                        f"to {float(total)!r} instead of 1"
                    )
                self._boundary_cached = float(total / total)
            else:
                self._boundary_cached = (
                    math.exp(self.root_log) * float(total)
                )
        return self._boundary_cached

    def sample_branch(self, rng, depth: int = None) -> Word:
        if not self.is_probability:
            raise DomainError(
                "branch sampling needs a probability measure; this one has "
                "boundary mass below 1"
            )
        depth = self.tree.depth if depth is None else depth
        dag = self._dag
        syms = []
        c = 0
        for _ in range(depth):
            cached = self._sample_cache.get(c)
            if cached is None:
                lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
                cum = np.cumsum(self.edge_prob[lo:hi])
                cached = (cum, dag.child_sym[lo:hi], dag.child_idx[lo:hi])
                self._sample_cache[c] = cached
            cum, child_sym, child_idx = cached
            j = int(np.searchsorted(cum, rng.random(), side="right"))
            j = min(j, len(cum) - 1)
            syms.append(int(child_sym[j]))
            c = int(child_idx[j])
        return tuple(syms)


class NodeMeasure(CylinderMeasure):
    """Explicit per-node masses; additivity is validated at construction."""

    name = "node"

    def __init__(self, tree, entries_log: dict, params: dict = None):
        words = tree.materialize_words()
        have = dict(entries_log)
        missing = [w for w in [()] + words if w not in have]
        if missing:
            raise DomainError(
                "measure entries missing node "
                f"'{word_to_string(missing[0])}'"
            )
        unknown = [w for w in have if w != () and not tree.contains(w)]
        if unknown:
            raise DomainError(
                f"measure entry for unknown node "
                f"'{word_to_string(unknown[0])}'"
            )
        children = {}
        for w in words:
            children.setdefault(w[:-1], []).append(w)
        for parent, kids in children.items():
            total = logsumexp([have[k] for k in kids])
            want = have[parent]
            if want == -math.inf and total == -math.inf:
                continue
            if abs(total - want) > 1e-9:
                raise DomainError(
                    "measure is not additive at node "
                    f"'{word_to_string(parent)}': children mass "
                    f"exp({total:.12g}) vs exp({want:.12g})"
                )
        root = have[()]
        if root == -math.inf:
            raise DomainError("zero-mass root: the measure vanishes")
        super().__init__(tree, params, is_probability=(root == 0.0))
        self.entries_log = have
        self._children = children

    def mass_log(self, word: Word) -> float:
        return self.entries_log.get(tuple(word), -math.inf)

    def boundary_mass(self) -> float:
        depth = self.tree.depth
        vals = [v for w, v in self.entries_log.items() if len(w) == depth]
        return float(math.exp(logsumexp(vals)))

    def sample_branch(self, rng, depth: int = None) -> Word:
        if not self.is_probability:
            raise DomainError(
                "branch sampling needs a probability measure; this one has "
                "boundary mass below 1"
            )
        depth = self.tree.depth if depth is None else depth
        word = ()
        for _ in range(depth):
            kids = self._children[word]
            probs = np.array([self.mass(k) for k in kids])
            probs = probs / probs.sum()
            word = kids[int(rng.choice(len(kids), p=probs))]
        return word


# ---------------------------------------------------------------------------
# Bernoulli and Markov constructors
# ---------------------------------------------------------------------------


def _check_prob_vector(vec, size, what):
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (size,):
        raise DomainError(f"{what} must have length {size}")
    if (arr < 0).any():
        raise DomainError(f"{what} must be nonnegative")
    if abs(arr.sum() - 1.0) > 1e-9:
        raise DomainError(f"{what} must sum to 1, got {arr.sum()!r}")
    return arr


def _ratio_measure_from_raw(tree, raw_by_class, name, params):
    """Build a RatioMeasure from per-class raw child weights, conditioning on
    staying inside the tree (per-node renormalization, flagged when it
    actually rescales anything)."""
    dag = tree.dag
    edge_prob = np.zeros(len(dag.child_idx))
    dead = []
    renormalized = False
    for c in range(dag.n_classes):
        lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
        if hi == lo:
            continue
        raw = raw_by_class(c, lo, hi)
        total = raw.sum()
        if total <= 0.0:
            dead.append(c)
            edge_prob[lo:hi] = 1.0 / (hi - lo)
            continue
        if abs(total - 1.0) > 1e-12:
            renormalized = True
        edge_prob[lo:hi] = _exact_prob_normalize(raw)
    if dead:
        # a dead class is an error only when positive mass reaches it
        probe = edge_prob.copy()
        with np.errstate(divide="ignore"):
            ratio = np.log(probe)
        for c in dead:
            lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
            ratio[lo:hi] = -math.inf
        agg = forward_masses(dag, ratio)
        for c in dead:
            if agg[c] > -math.inf:
                if c == 0:
                    raise DomainError(
                        "zero-mass root: no child of the root carries "
                        "positive probability"
                    )
                rep = word_to_string(dag.representative_word(c))
                raise DomainError(
                    f"zero-mass node '{rep}': probabilities vanish on every "
                    "child inside the tree"
                )
    return RatioMeasure(tree, edge_prob, name, params,
                        is_probability=True, renormalized=renormalized)


def bernoulli(tree: CylinderTree, probs) -> RatioMeasure:
    """Product measure with symbol probabilities `probs`, conditioned per
    node on the available children when the tree is pruned (flagged)."""
    p = _check_prob_vector(probs, tree.alphabet.size, "probability vector")
    dag = tree.dag

    def raw(c, lo, hi):
        return p[dag.child_sym[lo:hi].astype(np.int64) - 1]

    return _ratio_measure_from_raw(
        tree, raw, "bernoulli", {"probs": [float(x) for x in p]}
    )


class _LastSymbolRule(AutomatonRule):
    """Unconstrained full shift tracked by last symbol; gives Markov
    measures well-defined per-class conditionals."""

    name = "full_shift"

    def __init__(self, ell):
        self.ell = ell

    def initial_state(self):
        return 0

    def step(self, depth, state, sym):
        return sym

    def params(self):
        return {"ell": self.ell}


def _markov_ready(tree: CylinderTree) -> CylinderTree:
    """Return a node-identical tree whose classes determine the previous
    symbol, which Markov conditionals need."""
    if isinstance(tree, ExplicitTree):
        return tree
    gen = tree.metadata.get("generator")
    if gen == "sft":
        return tree
    if gen == "full_shift":
        return AutomatonTree(tree.alphabet, tree.depth,
                             _LastSymbolRule(tree.alphabet.size),
                             metadata=dict(tree.metadata))
    try:
        return tree.to_explicit()
    except DomainError as exc:
        raise DomainError(
            "markov measures need a tree whose classes determine the "
            f"previous symbol; converting failed: {exc}"
        )


def markov(tree: CylinderTree, transition, initial) -> RatioMeasure:
    """Markov measure with transition rows `transition` and initial law
    `initial`, conditioned on the tree where pruned (flagged)."""
    size = tree.alphabet.size
    init = _check_prob_vector(initial, size, "initial vector")
    trans = np.asarray(transition, dtype=np.float64)
    if trans.shape != (size, size):
        raise DomainError(f"transition matrix must be {size}x{size}")
    if (trans < 0).any():
        raise DomainError("transition matrix must be nonnegative")
    bad = np.abs(trans.sum(axis=1) - 1.0) > 1e-9
    if bad.any():
        raise DomainError(
            f"transition row {int(np.argmax(bad)) + 1} must sum to 1"
        )
    host = _markov_ready(tree)
    dag = host.dag
    depths = dag.class_depth

    def raw(c, lo, hi):
        syms = dag.child_sym[lo:hi].astype(np.int64) - 1
        if depths[c] == 0:
            return init[syms]
        return trans[int(dag.parent_sym[c]) - 1, syms]

    return _ratio_measure_from_raw(
        tree=host, raw_by_class=raw, name="markov",
        params={"transition": trans.tolist(),
                "initial": [float(x) for x in init]},
    )


# ---------------------------------------------------------------------------
# Frostman measure from the max flow
# ---------------------------------------------------------------------------


@dataclass
class FrostmanResult:
    """Normalized max-flow measure with its total flow.

    The defining bound is c * mass(u) * e^(s(|u|-m)) <= 1 for every node at
    admissible depth, with c the total flow; `bound_margin` reports the worst
    log-domain slack (<= 0 up to float noise when the flow is feasible).
    """

    c: float
    log_c: float
    s: float
    n_window: int
    scale: int
    mode: str
    capacity_margin: float
    measure: RatioMeasure

    def __iter__(self):
        return iter((self.c, self.measure))


def _forward_max(dag, route: np.ndarray, depth: int = None) -> np.ndarray:
    """Maximum path sum from the root to each class (log of the largest
    single-node mass in the class)."""
    d_stop = dag.depth if depth is None else depth
    agg = np.full(dag.n_classes, -np.inf)
    agg[0] = 0.0
    for d in range(d_stop):
        c_lo, c_hi = int(dag.level_ptr[d]), int(dag.level_ptr[d + 1])
        e_lo, e_hi = int(dag.child_ptr[c_lo]), int(dag.child_ptr[c_hi])
        if e_lo == e_hi:
            continue
        counts = np.diff(dag.child_ptr[c_lo:c_hi + 1]).astype(np.int64)
        parents = np.repeat(np.arange(c_lo, c_hi), counts)
        cand = agg[parents] + route[e_lo:e_hi]
        np.maximum.at(agg, dag.child_idx[e_lo:e_hi], cand)
    return agg


def frostman_measure(tree: CylinderTree, s: float, n_window: int = 1,
                     scale: int = 1, mode: str = "ball",
                     backend: str = None) -> FrostmanResult:
    """Normalized max-flow measure under node capacities e^(-s(depth-m)).

    Mass routes from the root proportionally to the children's flows, so
    mass(u) <= flow(u)/flow(root) <= capacity(u)/c holds node by node.
    """
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    cap, flow, lse = flow_arrays(tree, s, n_window, scale, mode, backend)
    log_c = float(flow[0])
    if not math.isfinite(log_c):
        raise DomainError(
            "empty weighted measure: the weighted cover value is zero"
        )
    dag = tree.dag
    edge_prob = np.zeros(len(dag.child_idx))
    for c in range(dag.n_classes):
        lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
        if hi == lo:
            continue
        kids = dag.child_idx[lo:hi]
        edge_prob[lo:hi] = _exact_prob_normalize(
            np.exp(flow[kids] - lse[c])
        )
    finite = np.isfinite(cap)
    margin = float(np.max(flow[finite] - cap[finite])) if finite.any() else 0.0
    measure = RatioMeasure(
        tree, edge_prob, "frostman",
        {"s": s, "n_window": n_window, "scale": scale, "mode": mode},
    )
    return FrostmanResult(
        c=math.exp(log_c), log_c=log_c, s=s, n_window=n_window, scale=scale,
        mode=mode, capacity_margin=margin, measure=measure,
    )


def frostman_bound_margin(result: FrostmanResult) -> float:
    """Worst log slack of c * mass(u) * e^(s(|u|-m)) <= 1 over all admissible
    nodes; per-class maxima make the node sweep exact."""
    measure = result.measure
    dag = measure._dag
    start = result.n_window + result.scale
    maxmass = _forward_max(dag, measure.edge_ratio) + measure.root_log
    depths = dag.class_depth
    worst = -math.inf
    for c in range(dag.n_classes):
        d = int(depths[c])
        if d < start or maxmass[c] == -math.inf:
            continue
        worst = max(worst,
                    result.log_c + maxmass[c] + result.s * (d - result.scale))
    return worst


# ---------------------------------------------------------------------------
# antichain selection inside a weight window
# ---------------------------------------------------------------------------


@dataclass
class WindowAntichain:
    """Single-depth antichain whose weight sum lies strictly inside (a, b)."""

    depth: int
    entries: list  # (class_id, node count below one subtree root)
    node_count: int
    total_log: float
    node_weight_log: float
    granularity_depth: int

    @property
    def total(self) -> float:
        return math.exp(self.total_log)


def _antichain_exponent(depth: int, scale: int, mode: str) -> int:
    return depth - scale + 1 if mode == "ball" else depth


def _window_select(dag, parent_class: int, parent_depth: int, s: float,
                   lo_log: float, hi_log: float, scale: int, mode: str,
                   window_start: int, min_depth: int):
    """Pick nodes at one depth below one `parent_class` node so the weight
    sum crosses lo and stays under hi.

    All nodes at a depth share the weight e^(-s n(d)), so crossing needs
    k = floor(lo/w) + 1 nodes once w < b-a; taking them is the mirror of
    the discard-one-by-one argument run from below. Depths where float
    rounding leaves the sum outside the open window are skipped in favor of
    finer ones.
    """
    width_log = logdiffexp(hi_log, lo_log)
    depth = dag.depth
    d_min = max(window_start, min_depth, parent_depth + 1)
    avail = {parent_class: 1}
    level = parent_depth
    granularity_depth = None
    shortfall = None
    while level < depth and avail:
        nxt = {}
        for c, cnt in avail.items():
            lo_e, hi_e = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
            for e in range(lo_e, hi_e):
                ci = int(dag.child_idx[e])
                nxt[ci] = nxt.get(ci, 0) + cnt
        avail = nxt
        level += 1
        if level < d_min:
            continue
        w_log = -s * _antichain_exponent(level, scale, mode)
        if w_log >= width_log:
            continue  # granularity still too coarse for this window
        if granularity_depth is None:
            granularity_depth = level
        if lo_log == -math.inf:
            k = 1
        else:
            r_log = lo_log - w_log
            if r_log > math.log(1e15):
                raise DomainError(
                    "insufficient packing richness: the window needs more "
                    f"than 1e15 nodes at depth {level}"
                )
            k = int(math.floor(math.exp(r_log))) + 1
            while math.log(k) + w_log <= lo_log:
                k += 1
        total_avail = sum(avail.values())
        if total_avail < k:
            if shortfall is None or k - total_avail < shortfall[0]:
                shortfall = (k - total_avail, level, k, total_avail)
            continue
        total_log = math.log(k) + w_log
        if not (lo_log < total_log < hi_log):
            continue  # crossing not robust at this granularity; go deeper
        entries = []
        remaining = k
        for c in sorted(avail):
            take = min(remaining, avail[c])
            if take > 0:
                entries.append((c, take))
                remaining -= take
            if remaining == 0:
                break
        return WindowAntichain(
            depth=level, entries=entries, node_count=k, total_log=total_log,
            node_weight_log=w_log, granularity_depth=granularity_depth,
        )
    if granularity_depth is None:
        raise DomainError(
            "insufficient packing richness: no depth at or below "
            f"{depth} has node weight under the window width"
        )
    detail = ""
    if shortfall is not None:
        detail = (f"; best depth {shortfall[1]} offers {shortfall[3]} nodes "
                  f"but the window needs {shortfall[2]}")
    raise DomainError(
        "insufficient packing richness: the subtree cannot fill the weight "
        f"window at any depth in [{granularity_depth}, {depth}]{detail}"
    )


def antichain_in_window(tree: CylinderTree, root: Word, s: float, a: float,
                        b: float, n_window: int = 1, scale: int = 1,
                        mode: str = "ball",
                        min_depth: int = None) -> WindowAntichain:
    """Antichain below `root` whose weight sum lies strictly in (a, b).

    Weights are e^(-s n(u)) with the antichain depth convention; member
    depths satisfy the granularity requirement (node weight below the window
    width) and any explicit `min_depth`.
    """
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    check_scale(scale)
    if mode not in ("ball", "clopen"):
        raise DomainError(
            f"node weight mode must be 'ball' or 'clopen', got {mode!r}"
        )
    if not (0 <= a < b):
        raise DomainError(f"weight window needs 0 <= a < b, got ({a}, {b})")
    root = tuple(int(x) for x in root)
    dag = tree.dag
    parent_class = dag.walk_class(root)
    if parent_class is None:
        raise DomainError(
            f"word '{word_to_string(root)}' is not a node of the tree"
        )
    start = n_window + scale - 1 if mode == "ball" else n_window
    lo_log = math.log(a) if a > 0 else -math.inf
    return _window_select(
        dag, parent_class, len(root), s, lo_log, math.log(b), scale, mode,
        window_start=start, min_depth=min_depth or 0,
    )


# ---------------------------------------------------------------------------
# staged packing construction
# ---------------------------------------------------------------------------


@dataclass
class StageRecord:
    """One selected class of one refinement call.

    `count` nodes of `class_id` sit below each node of the parent record;
    `weight_log` is the selection weight -s n(depth); `below_log` is the
    final-measure mass below one such node before normalization."""

    stage: int
    class_id: int
    depth: int
    parent: int
    count: int
    weight_log: float
    below_log: float = math.nan
    children: list = field(default_factory=list)
    global_count_log: float = math.nan


class StageMeasure(CylinderMeasure):
    """Measure from staged antichain refinement (packing Frostman witness).

    Stage 1 selects an antichain with weight sum in (1, 2); every later stage
    refines each selected class by an antichain in its nodes' subtrees with
    weight window (mass, (1+2^-(p+1)) mass), strictly deeper than all
    previous stages. Raw selection weights are kept as masses and normalized
    once at the end, so every selected node obeys
    mass(u) <= C e^(-s n(u)) with C the infinite product of (1+2^-n).

    Concretely, each refinement takes the lexicographically first `count`
    descendants of the selected class below each parent node; cylinder
    masses at non-stage depths follow from that choice, and mass below the
    final stage spreads uniformly over the remaining subtree.
    """

    name = "packing-frostman"

    def __init__(self, tree, records, total_log, s, n_window, scale, mode,
                 stages, final_min_depth=None):
        super().__init__(
            tree,
            {"s": s, "n_window": n_window, "scale": scale, "mode": mode,
             "stages": stages, "final_min_depth": final_min_depth},
            is_probability=True,
        )
        self.records = records
        self.total_log = total_log
        self.s = s
        self.n_window = n_window
        self.scale = scale
        self.mode = mode
        self.stages = stages
        self._dag = tree.dag
        self._desc_memo = {}

    # -- structure helpers --

    def records_at_stage(self, stage: int) -> list:
        return [r for r in self.records if r.stage == stage]

    @property
    def stage_depths(self) -> list:
        out = []
        for p in range(1, self.stages + 1):
            out.append(sorted({r.depth for r in self.records_at_stage(p)}))
        return out

    def chain(self, record_index: int) -> list:
        """Record indices from stage 1 down to the given record."""
        out = []
        i = record_index
        while i >= 0:
            out.append(i)
            i = self.records[i].parent
        return list(reversed(out))

    def bound_margin(self) -> float:
        """Worst log slack of mass(u) <= C e^(-s n(u)) over selected nodes."""
        worst = -math.inf
        for rec in self.records:
            mass = rec.below_log - self.total_log
            worst = max(worst,
                        mass - (PACKING_CONSTANT_LOG + rec.weight_log))
        return worst

    # -- cylinder masses under the leftmost selection rule --

    def _desc_counts(self, target_depth: int, target_class: int):
        """Per-level maps class -> exact number of depth-`target_depth`
        descendants of `target_class` below one node of that class."""
        key = (target_depth, target_class)
        memo = self._desc_memo.get(key)
        if memo is not None:
            return memo
        dag = self._dag
        levels = [dict() for _ in range(target_depth + 1)]
        levels[target_depth][target_class] = 1
        for d in range(target_depth - 1, -1, -1):
            below = levels[d + 1]
            here = levels[d]
            for c in dag.classes_at(d):
                lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
                total = 0
                for e in range(lo, hi):
                    total += below.get(int(dag.child_idx[e]), 0)
                if total:
                    here[c] = total
        self._desc_memo[key] = levels
        return levels

    def _rank_walk(self, word, from_depth: int, target_depth: int,
                   target_class: int):
        """(left, below): class-`target_class` nodes at `target_depth` under
        word[:from_depth] that lie strictly left of word's subtree, and under
        word itself."""
        dag = self._dag
        levels = self._desc_counts(target_depth, target_class)
        c = dag.walk_class(word[:from_depth])
        left = 0
        stop = min(len(word), target_depth)
        for d in range(from_depth, stop):
            sym = int(word[d])
            lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
            nxt = None
            for e in range(lo, hi):
                if int(dag.child_sym[e]) < sym:
                    left += levels[d + 1].get(int(dag.child_idx[e]), 0)
                elif int(dag.child_sym[e]) == sym:
                    nxt = int(dag.child_idx[e])
            if nxt is None:
                return left, 0
            c = nxt
        below = levels[stop].get(c, 0) if stop <= target_depth else 0
        return left, below

    def _mass_below(self, rec_index: int, rec_depth: int, word) -> float:
        """Unnormalized mass of [word] inside the subtree of the selected
        node word[:rec_depth] belonging to record `rec_index`."""
        kids = (self.records[rec_index].children if rec_index >= 0
                else [i for i, r in enumerate(self.records) if r.stage == 1])
        if not kids:
            # below the final stage: split uniformly over the atom's
            # full-depth descendants
            rec = self.records[rec_index]
            dag = self._dag
            per_node = dag.boundary_per_node
            here = dag.walk_class(word)
            return (rec.weight_log + _log_big(per_node[here])
                    - _log_big(per_node[rec.class_id]))
        child_depth = self.records[kids[0]].depth
        if len(word) <= child_depth:
            terms = []
            for i in kids:
                rec = self.records[i]
                left, under = self._rank_walk(
                    word, rec_depth, rec.depth, rec.class_id
                )
                take = min(rec.count, left + under) - left
                if take > 0:
                    terms.append(_log_big(take) + rec.below_log)
            return logsumexp(terms) if terms else -math.inf
        crossing = self._dag.walk_class(word[:child_depth])
        for i in kids:
            rec = self.records[i]
            if rec.class_id != crossing:
                continue
            left, _ = self._rank_walk(word, rec_depth, rec.depth,
                                      rec.class_id)
            if left < rec.count:
                return self._mass_below(i, rec.depth, word)
            return -math.inf
        return -math.inf

    def mass_log(self, word: Word) -> float:
        word = tuple(int(x) for x in word)
        if self._dag.walk_class(word) is None:
            return -math.inf
        return self._mass_below(-1, 0, word) - self.total_log

    def boundary_mass(self) -> float:
        finals = self.records_at_stage(self.stages)
        return float(math.exp(logsumexp(
            [r.global_count_log + r.below_log for r in finals]
        ) - self.total_log))

    # -- exact measure-side evaluation along the stage subsequence --

    def stage_horizons(self) -> list:
        """Distinct local-entropy orders n = depth - m over all stages."""
        out = sorted({r.depth - self.scale for r in self.records
                      if r.depth - self.scale >= 1})
        return out

    def stage_value_integral(self, kind: str = "upper") -> float:
        """Exact integral of the per-branch min/max of v_n over the branch's
        own stage depths, aggregated by final-stage class.

        Like every finite-horizon estimate here, the min/max ranges over the
        final third of the branch's n-window; stage horizons above it are
        transients (at least the deepest stage always qualifies)."""
        if kind not in ("lower", "upper"):
            raise DomainError(f"kind must be 'lower' or 'upper', got {kind!r}")
        pick = max if kind == "upper" else min
        total = 0.0
        mass_total = 0.0
        for i, rec in enumerate(self.records):
            if rec.stage != self.stages:
                continue
            pairs = []
            for j in self.chain(i):
                r = self.records[j]
                n = r.depth - self.scale
                if n >= 1:
                    pairs.append((n, -(r.below_log - self.total_log) / n))
            if not pairs:
                raise DomainError(
                    f"no stage depth exceeds the scale {self.scale}; the "
                    "stage integral has no horizon"
                )
            cutoff = _tail_start(max(n for n, _ in pairs))
            values = [v for n, v in pairs if n >= cutoff]
            weight = math.exp(
                rec.global_count_log + rec.below_log - self.total_log
            )
            total += weight * pick(values)
            mass_total += weight
        return total / mass_total


def packing_frostman(tree: CylinderTree, s: float, n_window: int = 1,
                     scale: int = 1, mode: str = "ball", stages: int = 3,
                     final_min_depth: int = None) -> StageMeasure:
    """Staged antichain measure witnessing packing entropy at exponent s.

    `final_min_depth` pushes the last stage at least that deep (the
    refinement depths are free parameters, and deeper final atoms make the
    finite-horizon entropy estimates sharper). Raises a domain error naming
    the stage and a representative node when some subtree cannot fill its
    weight window.
    """
    if s < 0:
        raise DomainError(f"weight exponent s must be >= 0, got {s}")
    check_scale(scale)
    if stages < 1:
        raise DomainError(f"stages must be a positive integer, got {stages}")
    if mode not in ("ball", "clopen"):
        raise DomainError(
            f"node weight mode must be 'ball' or 'clopen', got {mode!r}"
        )
    dag = tree.dag
    start = n_window + scale - 1 if mode == "ball" else n_window
    if start > tree.depth:
        raise DomainError(
            f"admissible depths start at {start}, which exceeds the tree "
            f"depth {tree.depth}"
        )
    records = []
    first_min_depth = final_min_depth if stages == 1 else None
    try:
        first = _window_select(
            dag, 0, 0, s, 0.0, math.log(2.0), scale, mode,
            window_start=start, min_depth=first_min_depth or 0,
        )
    except DomainError as exc:
        raise DomainError(f"packing stage 1 infeasible at the root: {exc}")
    for cls, cnt in first.entries:
        records.append(StageRecord(
            stage=1, class_id=cls, depth=first.depth, parent=-1, count=cnt,
            weight_log=first.node_weight_log,
        ))
    for p in range(1, stages):
        prev = [i for i, r in enumerate(records) if r.stage == p]
        min_depth = max(records[i].depth for i in prev) + 1
        if p + 1 == stages and final_min_depth is not None:
            min_depth = max(min_depth, final_min_depth)
        hi_shift = math.log1p(2.0 ** -(p + 1))
        for i in prev:
            rec = records[i]
            try:
                sel = _window_select(
                    dag, rec.class_id, rec.depth, s,
                    lo_log=rec.weight_log, hi_log=rec.weight_log + hi_shift,
                    scale=scale, mode=mode, window_start=start,
                    min_depth=min_depth,
                )
            except DomainError as exc:
                rep = word_to_string(dag.representative_word(rec.class_id))
                raise DomainError(
                    f"packing stage {p + 1} infeasible below node "
                    f"'{rep}': {exc}"
                )
            for cls, cnt in sel.entries:
                rec.children.append(len(records))
                records.append(StageRecord(
                    stage=p + 1, class_id=cls, depth=sel.depth, parent=i,
                    count=cnt, weight_log=sel.node_weight_log,
                ))
    for rec in reversed(records):
        if not rec.children:
            rec.below_log = rec.weight_log
        else:
            rec.below_log = logsumexp(
                [_log_big(records[j].count) + records[j].below_log
                 for j in rec.children]
            )
    for i, rec in enumerate(records):
        parent_gcl = (records[rec.parent].global_count_log
                      if rec.parent >= 0 else 0.0)
        rec.global_count_log = parent_gcl + _log_big(rec.count)
    # Normalize by the total over final atoms, so the boundary (which is
    # carried entirely by the atoms) gets mass exactly 1.
    total_log = logsumexp(
        [r.global_count_log + r.below_log for r in records
         if r.stage == stages]
    )
    return StageMeasure(tree, records, total_log, s, n_window, scale, mode,
                        stages, final_min_depth)


# ---------------------------------------------------------------------------
# local entropy and its integrals
# ---------------------------------------------------------------------------


@dataclass
class LocalEntropyEstimate:
    """Finite-scale local entropy along one branch.

    values[i] is v_n = -(1/n) ln mass(x[1..n+m]) at n = n_values[i]; the
    liminf/limsup estimates take min/max over the final third of the window
    (or over the explicit horizon subsequence when one was given)."""

    word: Word
    scale: int
    n_values: np.ndarray
    values: np.ndarray
    tail_start: int
    liminf_estimate: float
    limsup_estimate: float


def local_entropy(measure: CylinderMeasure, word: Word, n_max: int = None,
                  scale: int = 1, horizons=None) -> LocalEntropyEstimate:
    """Per-n local entropy values along `word` with tail estimates.

    A zero-mass cylinder records +inf at that n (point outside support).
    """
    check_scale(scale)
    word = tuple(int(x) for x in word)
    if horizons is not None:
        ns = sorted(int(n) for n in set(horizons))
        if not ns or ns[0] < 1:
            raise DomainError("horizons must be positive integers")
        n_max = ns[-1]
    else:
        if n_max is None:
            n_max = len(word) - scale
        if n_max < 1:
            raise DomainError(f"n_max must be at least 1, got {n_max}")
        ns = list(range(1, n_max + 1))
    if len(word) < n_max + scale:
        raise DomainError(
            f"insufficient prefix: local entropy at order {n_max} and scale "
            f"{scale} needs {n_max + scale} symbols, got {len(word)}"
        )
    logs = measure.prefix_mass_logs(word[:n_max + scale])
    n_arr = np.array(ns, dtype=np.int64)
    with np.errstate(invalid="ignore"):
        values = -logs[n_arr + scale] / n_arr
    tail_from = ns[0] if horizons is not None else _tail_start(n_max)
    tail = values[n_arr >= tail_from]
    return LocalEntropyEstimate(
        word=word, scale=scale, n_values=n_arr, values=values,
        tail_start=tail_from,
        liminf_estimate=float(np.min(tail)),
        limsup_estimate=float(np.max(tail)),
    )


@dataclass
class IntegralEstimate:
    """Mass-weighted integral of per-branch tail estimates."""

    value: float
    kind: str
    method: str
    n_max: int
    scale: int
    boundary_mass: float
    n_samples: int = None
    stderr: float = None
    seed: int = None


def _constant_ratio_profile(measure: RatioMeasure, target_depth: int):
    """Cumulative log-mass profile when every branch sees identical edge
    probabilities level by level, else None."""
    dag = measure._dag
    profile = np.empty(target_depth + 1)
    profile[0] = measure.root_log
    for d in range(target_depth):
        c_lo, c_hi = int(dag.level_ptr[d]), int(dag.level_ptr[d + 1])
        e_lo, e_hi = int(dag.child_ptr[c_lo]), int(dag.child_ptr[c_hi])
        ratios = measure.edge_ratio[e_lo:e_hi]
        if len(ratios) == 0 or ratios.max() != ratios.min():
            return None
        profile[d + 1] = profile[d] + ratios[0]
    return profile


def _tail_estimate_from_logs(logs: np.ndarray, kind: str, n_max: int,
                             scale: int) -> float:
    ts = _tail_start(n_max)
    ns = np.arange(ts, n_max + 1)
    vals = -logs[ns + scale] / ns
    return float(np.max(vals) if kind == "upper" else np.min(vals))


def _integral_exact_ratio(measure: RatioMeasure, kind: str, n_max: int,
                          scale: int) -> float:
    dag = measure._dag
    target = n_max + scale
    ts = _tail_start(n_max)
    cls = np.array([0], dtype=np.int64)
    mass = np.array([measure.root_log])
    vres = np.full(1, -np.inf if kind == "upper" else np.inf)
    better = np.maximum if kind == "upper" else np.minimum
    child_ptr = dag.child_ptr
    child_idx = dag.child_idx
    for depth in range(1, target + 1):
        lo = child_ptr[cls]
        cnt = (child_ptr[cls + 1] - lo).astype(np.int64)
        total = int(cnt.sum())
        parent = np.repeat(np.arange(len(cls)), cnt)
        starts = np.concatenate(([0], np.cumsum(cnt)[:-1]))
        epos = np.repeat(lo, cnt) + (np.arange(total) - np.repeat(starts, cnt))
        cls = child_idx[epos]
        mass = mass[parent] + measure.edge_ratio[epos]
        vres = vres[parent]
        keep = mass > -np.inf
        if not keep.all():
            cls, mass, vres = cls[keep], mass[keep], vres[keep]
        n = depth - scale
        if n >= ts:
            vres = better(vres, -mass / n)
    weights = np.exp(mass)
    return float(np.dot(weights, vres))


def _integral_exact_generic(measure: CylinderMeasure, kind: str, n_max: int,
                            scale: int) -> float:
    target = n_max + scale
    words = [w for w in measure.tree.materialize_words() if len(w) == target]
    total = 0.0
    for w in words:
        logs = measure.prefix_mass_logs(w)
        weight = math.exp(logs[-1])
        if weight > 0.0:
            total += weight * _tail_estimate_from_logs(logs, kind, n_max,
                                                       scale)
    return total


def _boundary_at(measure, target: int) -> float:
    if isinstance(measure, RatioMeasure):
        agg = measure.class_mass_logs()
        classes = measure._dag.classes_at(target)
        return float(math.exp(logsumexp([agg[c] for c in classes])))
    words = [w for w in measure.tree.materialize_words()
             if len(w) == target]
    return float(sum(measure.mass(w) for w in words))


def integral_local_entropy(measure: CylinderMeasure, kind: str = "lower",
                           n_max: int = None, scale: int = 1,
                           method: str = "auto", samples: int = 100,
                           seed: int = 0,
                           path_budget: int = DEFAULT_PATH_BUDGET
                           ) -> IntegralEstimate:
    """Integral over the boundary of per-branch tail estimates.

    Methods: "exact" enumerates depth-(n_max+m) nodes; "constant" evaluates
    one representative branch when all branches share the mass profile;
    "stage" aggregates a staged measure by final class; "monte-carlo"
    averages over sampled branches. "auto" picks the cheapest exact route
    and falls back to sampling.
    """
    if kind not in ("lower", "upper"):
        raise DomainError(f"kind must be 'lower' or 'upper', got {kind!r}")
    check_scale(scale)
    if n_max is None:
        n_max = measure.tree.depth - scale
    if n_max < 1 or n_max + scale > measure.tree.depth:
        raise DomainError(
            f"integral horizon n_max={n_max} with scale {scale} does not fit "
            f"the tree depth {measure.tree.depth}"
        )
    target = n_max + scale
    if method == "auto":
        if isinstance(measure, StageMeasure):
            method = "stage"
        elif isinstance(measure, RatioMeasure):
            if _constant_ratio_profile(measure, target) is not None:
                method = "constant"
            else:
                node_count = sum(
                    measure._dag.counts[c]
                    for c in measure._dag.classes_at(target)
                )
                method = "exact" if node_count <= path_budget else (
                    "monte-carlo")
        else:
            method = "exact"

    if method == "stage":
        if not isinstance(measure, StageMeasure):
            raise DomainError("method 'stage' needs a staged measure")
        value = measure.stage_value_integral(kind)
        return IntegralEstimate(value=value, kind=kind, method="stage",
                                n_max=n_max, scale=scale,
                                boundary_mass=measure.boundary_mass())
    if method == "constant":
        profile = _constant_ratio_profile(measure, target)
        if profile is None:
            raise DomainError(
                "method 'constant' needs identical branch mass profiles"
            )
        est = _tail_estimate_from_logs(profile, kind, n_max, scale)
        boundary = _boundary_at(measure, target)
        return IntegralEstimate(value=est * boundary, kind=kind,
                                method="constant", n_max=n_max, scale=scale,
                                boundary_mass=boundary)
    if method == "exact":
        if isinstance(measure, RatioMeasure):
            value = _integral_exact_ratio(measure, kind, n_max, scale)
        else:
            value = _integral_exact_generic(measure, kind, n_max, scale)
        return IntegralEstimate(value=value, kind=kind, method="exact",
                                n_max=n_max, scale=scale,
                                boundary_mass=_boundary_at(measure, target))
    if method == "monte-carlo":
        rng = np.random.default_rng(seed)
        vals = np.empty(samples)
        for i in range(samples):
            branch = measure.sample_branch(rng, depth=target)
            logs = measure.prefix_mass_logs(branch)
            vals[i] = _tail_estimate_from_logs(logs, kind, n_max, scale)
        stderr = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 \
            else math.inf
        return IntegralEstimate(value=float(vals.mean()), kind=kind,
                                method="monte-carlo", n_max=n_max,
                                scale=scale, boundary_mass=1.0,
                                n_samples=samples, stderr=stderr, seed=seed)
    raise DomainError(f"unknown integral method {method!r}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def measure_to_json_obj(measure: CylinderMeasure, form: str = "auto") -> dict:
    """JSON form of a measure: "spec" stores construction parameters,
    "nodes" stores explicit per-node log masses."""
    spec_kinds = ("bernoulli", "markov", "frostman", "packing-frostman")
    if form == "auto":
        form = "spec" if measure.name in spec_kinds else "nodes"
    obj = {
        "schema_version": MEASURE_SCHEMA_VERSION,
        "tree": tree_to_json_obj(measure.tree),
    }
    if form == "spec":
        if measure.name not in spec_kinds:
            raise DomainError(
                f"measure kind {measure.name!r} has no parametric form"
            )
        obj["kind"] = measure.name
        obj["params"] = dict(measure.params)
        return obj
    if form != "nodes":
        raise DomainError(f"unknown measure form {form!r}")
    obj["kind"] = "node"
    words = [()] + measure.tree.materialize_words()
    obj["entries"] = [
        [word_to_string(w), measure.mass_log(w)] for w in words
    ]
    return obj


def measure_from_json_obj(obj: dict) -> CylinderMeasure:
    version = obj.get("schema_version")
    if version != MEASURE_SCHEMA_VERSION:
        raise DomainError(
            f"unsupported measure schema version {version!r}"
        )
    tree = tree_from_json_obj(obj["tree"])
    kind = obj.get("kind")
    if kind == "node":
        entries = {}
        for word_str, mass_log in obj["entries"]:
            word = word_from_string(str(word_str)) if word_str else ()
            entries[word] = float(mass_log)
        return NodeMeasure(tree, entries)
    params = obj.get("params", {})
    if kind == "bernoulli":
        return bernoulli(tree, params["probs"])
    if kind == "markov":
        return markov(tree, params["transition"], params["initial"])
    if kind == "frostman":
        return frostman_measure(
            tree, params["s"], params.get("n_window", 1),
            params.get("scale", 1), params.get("mode", "ball"),
        ).measure
    if kind == "packing-frostman":
        return packing_frostman(
            tree, params["s"], params.get("n_window", 1),
            params.get("scale", 1), params.get("mode", "ball"),
            params.get("stages", 3), params.get("final_min_depth"),
        )
    raise DomainError(f"unknown measure kind {kind!r}")


def save_measure(measure: CylinderMeasure, path, form: str = "auto") -> None:
    path = Path(path)
    path.write_text(
        json.dumps(measure_to_json_obj(measure, form), indent=2) + "\n"
    )


def load_measure(path) -> CylinderMeasure:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed measure file {path}: {exc}")
    return measure_from_json_obj(obj)
