"""Pruned cylinder trees and their layered class representation.

A compact subset of the full shift is represented, up to observation depth D,
by the set of cylinders (finite words) that meet it: a prefix-closed tree in
which every node has a descendant at depth D ("pruned"). Entropy engines never
walk individual nodes; they run on a LayeredDag, a per-level quotient of the
tree in which nodes with identical admissible futures share a class. Explicit
trees use one class per node; rule-generated trees (subshifts of finite type,
frequency-constrained sets, block schedules) compress to a few classes per
level, which is what makes depth 1000+ and alphabet-width-24 trees tractable.

Class counts are exact big integers; their logs feed the floating-point
engines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .words import Alphabet, FrequencyConstraint, Word, word_from_string, word_to_string

DEFAULT_NODE_BUDGET = 500_000


# ---------------------------------------------------------------------------
# layered class DAG
# ---------------------------------------------------------------------------


@dataclass
class LayeredDag:
    """Per-level class quotient of a pruned cylinder tree.

    Classes are numbered globally, level by level; classes of level d occupy
    ids [level_ptr[d], level_ptr[d+1]). Edges are stored CSR-style per class,
    sorted by symbol, pointing at next-level class ids. All nodes of a class
    have identical subtrees, so per-class dynamic programming is exact.
    """

    ell: int
    depth: int
    level_ptr: np.ndarray  # int64, len depth+2
    child_ptr: np.ndarray  # int64, len n_classes+1
    child_idx: np.ndarray  # int64, global child class ids
    child_sym: np.ndarray  # int16, symbols 1..ell
    parent_hint: np.ndarray  # int64, one representative parent class; root -1
    parent_sym: np.ndarray  # int16, symbol on the representative edge; root -1
    _counts: list = field(default=None, repr=False)
    _log_count: np.ndarray = field(default=None, repr=False)
    _boundary_counts: list = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return int(self.level_ptr[-1])

    def classes_at(self, d: int) -> range:
        return range(int(self.level_ptr[d]), int(self.level_ptr[d + 1]))

    @property
    def class_depth(self) -> np.ndarray:
        sizes = np.diff(self.level_ptr)
        return np.repeat(np.arange(self.depth + 1, dtype=np.int64), sizes)

    @property
    def counts(self) -> list:
        """Exact number of tree nodes in each class (big integers)."""
        if self._counts is None:
            counts = [0] * self.n_classes
            counts[0] = 1
            for c in range(self.n_classes):
                cc = counts[c]
                if cc == 0:
                    continue
                for e in range(self.child_ptr[c], self.child_ptr[c + 1]):
                    counts[self.child_idx[e]] += cc
            self._counts = counts
        return self._counts

    @property
    def boundary_per_node(self) -> list:
        """Exact number of depth-D descendants below one node of each class
        (big integers); classes are level-ordered, so a reverse sweep sees
        children before parents."""
        if self._boundary_counts is None:
            b = [0] * self.n_classes
            for c in self.classes_at(self.depth):
                b[c] = 1
            for c in range(self.n_classes - 1, -1, -1):
                lo, hi = int(self.child_ptr[c]), int(self.child_ptr[c + 1])
                if lo != hi:
                    b[c] = sum(b[self.child_idx[e]] for e in range(lo, hi))
            self._boundary_counts = b
        return self._boundary_counts

    @property
    def log_count(self) -> np.ndarray:
        if self._log_count is None:
            self._log_count = np.array(
                [math.log(c) for c in self.counts], dtype=np.float64
            )
        return self._log_count

    @property
    def level_homogeneous(self) -> bool:
        return bool(np.all(np.diff(self.level_ptr) == 1))

    def level_node_counts(self) -> list:
        """Exact number of tree nodes at each depth 0..D (big integers)."""
        counts = self.counts
        return [
            sum(counts[c] for c in self.classes_at(d)) for d in range(self.depth + 1)
        ]

    def children_symbols(self, c: int) -> list:
        lo, hi = int(self.child_ptr[c]), int(self.child_ptr[c + 1])
        return [int(s) for s in self.child_sym[lo:hi]]

    def child_by_symbol(self, c: int, sym: int):
        lo, hi = int(self.child_ptr[c]), int(self.child_ptr[c + 1])
        pos = lo + int(np.searchsorted(self.child_sym[lo:hi], sym))
        if pos < hi and self.child_sym[pos] == sym:
            return int(self.child_idx[pos])
        return None

    def walk_class(self, word: Word):
        """Class id of the node at `word`, or None when the word left the tree."""
        c = 0
        for sym in word:
            c = self.child_by_symbol(c, int(sym))
            if c is None:
                return None
        return c

    def representative_word(self, c: int) -> Word:
        syms = []
        while c != 0:
            syms.append(int(self.parent_sym[c]))
            c = int(self.parent_hint[c])
        return tuple(reversed(syms))


def _assemble_dag(ell, depth, level_keys, edges):
    """Build a LayeredDag from per-level class keys and local edge lists.

    level_keys[d] is a sorted list of hashable class keys at depth d.
    edges[d] is a sorted list of (local_parent, symbol, local_child) triples.
    """
    level_sizes = [len(ks) for ks in level_keys]
    level_ptr = np.zeros(depth + 2, dtype=np.int64)
    np.cumsum(level_sizes, out=level_ptr[1:])
    n_classes = int(level_ptr[-1])

    counts_per_class = np.zeros(n_classes, dtype=np.int64)
    for d in range(depth):
        base = level_ptr[d]
        for lp, sym, lc in edges[d]:
            counts_per_class[base + lp] += 1
    child_ptr = np.zeros(n_classes + 1, dtype=np.int64)
    np.cumsum(counts_per_class, out=child_ptr[1:])
    n_edges = int(child_ptr[-1])
    child_idx = np.zeros(n_edges, dtype=np.int64)
    child_sym = np.zeros(n_edges, dtype=np.int16)
    parent_hint = np.full(n_classes, -1, dtype=np.int64)
    parent_sym = np.full(n_classes, -1, dtype=np.int16)

    cursor = child_ptr[:-1].copy()
    for d in range(depth):
        base = level_ptr[d]
        child_base = level_ptr[d + 1]
        for lp, sym, lc in edges[d]:
            parent = base + lp
            child = child_base + lc
            pos = cursor[parent]
            child_idx[pos] = child
            child_sym[pos] = sym
            cursor[parent] += 1
            if parent_hint[child] < 0:
                parent_hint[child] = parent
                parent_sym[child] = sym
    return LayeredDag(
        ell=ell,
        depth=depth,
        level_ptr=level_ptr,
        child_ptr=child_ptr,
        child_idx=child_idx,
        child_sym=child_sym,
        parent_hint=parent_hint,
        parent_sym=parent_sym,
    )


# ---------------------------------------------------------------------------
# tree objects
# ---------------------------------------------------------------------------


class CylinderTree:
    """Base class: a pruned prefix tree of depth D over {1, ..., ell}."""

    def __init__(self, alphabet: Alphabet, depth: int, metadata: dict = None):
        if depth < 1:
            raise DomainError(f"tree depth must be >= 1, got {depth}")
        self.alphabet = alphabet
        self.depth = depth
        self.metadata = dict(metadata or {})
        self._dag = None

    @property
    def dag(self) -> LayeredDag:
        if self._dag is None:
            self._dag = self._compile()
        return self._dag

    def _compile(self) -> LayeredDag:
        raise NotImplementedError

    def describe(self):
        """Generator spec {"name", "params"} when reconstructible, else None."""
        return None

    def contains(self, word: Word) -> bool:
        if len(word) > self.depth:
            return False
        return self.dag.walk_class(word) is not None

    def children_of(self, word: Word) -> list:
        c = self.dag.walk_class(word)
        if c is None:
            raise DomainError(f"word {word!r} is not a node of the tree")
        return self.dag.children_symbols(c)

    def depth_counts(self) -> list:
        return self.dag.level_node_counts()

    def leaf_count(self):
        return self.depth_counts()[self.depth]

    def total_nodes(self):
        return sum(self.depth_counts())

    def materialize_words(self, max_nodes: int = DEFAULT_NODE_BUDGET) -> list:
        """All node words except the root, sorted by (length, word)."""
        total = self.total_nodes()
        if total - 1 > max_nodes:
            raise DomainError(
                f"tree too large to materialize: {total - 1} nodes exceed the "
                f"budget of {max_nodes}"
            )
        dag = self.dag
        words = []
        frontier = [((), 0)]
        for _ in range(self.depth):
            nxt = []
            for word, c in frontier:
                lo, hi = int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])
                for e in range(lo, hi):
                    nxt.append((word + (int(dag.child_sym[e]),), int(dag.child_idx[e])))
            words.extend(w for w, _ in nxt)
            frontier = nxt
        words.sort(key=lambda w: (len(w), w))
        return words

    def to_explicit(self, max_nodes: int = DEFAULT_NODE_BUDGET) -> "ExplicitTree":
        words = self.materialize_words(max_nodes)
        return ExplicitTree.from_nodes(
            self.alphabet, self.depth, words, metadata=dict(self.metadata)
        )


class ExplicitTree(CylinderTree):
    """A tree stored node by node (one class per node)."""

    def __init__(self, alphabet, depth, dag, metadata=None):
        super().__init__(alphabet, depth, metadata)
        self._dag = dag

    def _compile(self):
        return self._dag

    @classmethod
    def from_nodes(cls, alphabet, depth, nodes, metadata=None):
        """Build from any iterable of node words.

        The prefix closure of the input is taken, then nodes with no depth-D
        descendant are pruned away; an empty result raises DomainError.
        """
        node_set = set()
        for w in nodes:
            w = tuple(int(s) for s in w)
            alphabet.check_word(w)
            if len(w) > depth:
                raise DomainError(
                    f"node {word_to_string(w)} is deeper than the tree depth {depth}"
                )
            for i in range(1, len(w) + 1):
                node_set.add(w[:i])
        node_set.add(())

        buckets = [set() for _ in range(depth + 1)]
        for w in node_set:
            buckets[len(w)].add(w)

        # prune: keep nodes with a descendant at full depth
        alive_next = buckets[depth]
        by_level = [None] * (depth + 1)
        by_level[depth] = sorted(alive_next)
        for d in range(depth - 1, -1, -1):
            alive = {w for w in buckets[d] if any(
                w + (s,) in alive_next for s in alphabet.symbols
            )}
            by_level[d] = sorted(alive)
            alive_next = alive
        if not by_level[0]:
            raise DomainError("empty compact set: no branch reaches the full depth")
        index = [{w: i for i, w in enumerate(lst)} for lst in by_level]
        edges = []
        for d in range(depth):
            lvl = []
            for i, w in enumerate(by_level[d]):
                for s in alphabet.symbols:
                    j = index[d + 1].get(w + (s,))
                    if j is not None:
                        lvl.append((i, s, j))
            lvl.sort()
            edges.append(lvl)
        dag = _assemble_dag(alphabet.size, depth, by_level, edges)
        return cls(alphabet, depth, dag, metadata=metadata)


# ---------------------------------------------------------------------------
# rule-generated trees
# ---------------------------------------------------------------------------


class AutomatonRule:
    """Finite-state description of which children a node keeps.

    State lives on nodes; step(depth, state, sym) returns the child state or
    None when the extended word leaves the set. accepts_final filters states
    at full depth.
    """

    name = "abstract"

    def initial_state(self):
        raise NotImplementedError

    def step(self, depth, state, sym):
        raise NotImplementedError

    def accepts_final(self, state) -> bool:
        return True

    def params(self) -> dict:
        raise NotImplementedError


class FullShiftRule(AutomatonRule):
    name = "full_shift"

    def __init__(self, ell):
        self.ell = ell

    def initial_state(self):
        return 0

    def step(self, depth, state, sym):
        return 0

    def params(self):
        return {}


class SftRule(AutomatonRule):
    """Forbidden-word subshift: prune words containing any forbidden factor."""

    name = "sft"

    def __init__(self, ell, forbidden):
        if not forbidden:
            raise DomainError("sft generator needs at least one forbidden word")
        self.ell = ell
        self.forbidden = []
        alpha = Alphabet(ell)
        for f in forbidden:
            f = tuple(int(s) for s in f)
            if len(f) == 0:
                raise DomainError("forbidden words must be nonempty")
            alpha.check_word(f)
            self.forbidden.append(f)
        self.memory = max(len(f) for f in self.forbidden) - 1

    def initial_state(self):
        return ()

    def step(self, depth, state, sym):
        recent = state + (sym,)
        for f in self.forbidden:
            if len(f) <= len(recent) and recent[-len(f):] == f:
                return None
        return recent[-self.memory:] if self.memory > 0 else ()

    def params(self):
        return {"forbidden": [word_to_string(f) for f in self.forbidden]}


class FrequencyRule(AutomatonRule):
    """Words whose final symbol counts land in per-symbol windows.

    State is the count vector of symbols 2..ell so far; partial words that can
    no longer complete into the windows are pruned as soon as that is known.
    """

    name = "frequency"

    def __init__(self, constraint: FrequencyConstraint, depth: int):
        self.constraint = constraint
        self.ell = len(constraint.targets)
        self.depth = depth
        self.windows = constraint.count_windows(depth)

    def initial_state(self):
        return (0,) * (self.ell - 1)

    def _feasible(self, counts, filled):
        remaining = self.depth - filled
        need = 0
        room = 0
        for cnt, (lo, hi) in zip(counts, self.windows):
            if cnt > hi:
                return False
            if cnt < lo:
                need += lo - cnt
            room += hi - cnt
        return need <= remaining <= room

    def step(self, depth, state, sym):
        counts = list(state)
        filled = depth + 1
        if sym >= 2:
            counts[sym - 2] += 1
        full = [filled - sum(counts)] + counts
        if not self._feasible(full, filled):
            return None
        return tuple(counts)

    def accepts_final(self, state):
        counts = [self.depth - sum(state)] + list(state)
        return all(lo <= c <= hi for c, (lo, hi) in zip(counts, self.windows))

    def params(self):
        return {
            "targets": list(self.constraint.targets),
            "delta": self.constraint.delta,
        }


class BlockScheduleRule(AutomatonRule):
    """Every branch carries an exact count of a tracked symbol per block.

    Positions 1..D are partitioned into consecutive blocks; within each block
    a branch must use the tracked symbol exactly the required number of times.
    State is the tracked-symbol count inside the current block.
    """

    name = "block_schedule"

    def __init__(self, ell, depth, blocks, tracked_symbol=1):
        if sum(length for length, _ in blocks) != depth:
            raise DomainError(
                f"block lengths {[b[0] for b in blocks]} must sum to the depth {depth}"
            )
        for length, req in blocks:
            if not 0 <= req <= length:
                raise DomainError(f"block requirement {req} outside 0..{length}")
        if not 1 <= tracked_symbol <= ell:
            raise DomainError(f"tracked symbol {tracked_symbol} outside alphabet")
        self.ell = ell
        self.depth = depth
        self.blocks = [(int(a), int(b)) for a, b in blocks]
        self.tracked = tracked_symbol
        # per 1-based position: (block length, requirement, offset in block)
        self.position_info = [None]
        for length, req in self.blocks:
            for off in range(1, length + 1):
                self.position_info.append((length, req, off))

    def initial_state(self):
        return 0

    def step(self, depth, state, sym):
        pos = depth + 1
        length, req, off = self.position_info[pos]
        cnt = state + (1 if sym == self.tracked else 0)
        if cnt > req or req - cnt > length - off:
            return None
        if off == length:
            return 0 if cnt == req else None
        return cnt

    def params(self):
        return {
            "blocks": [list(b) for b in self.blocks],
            "tracked_symbol": self.tracked,
        }


class LevelBranchingRule(AutomatonRule):
    """Depth-dependent branching: position p keeps the first width(p) symbols."""

    name = "level_branching"

    def __init__(self, ell, depth, widths):
        if len(widths) != depth:
            raise DomainError(
                f"need one branching width per position, got {len(widths)} for depth {depth}"
            )
        for w in widths:
            if not 1 <= w <= ell:
                raise DomainError(f"branching width {w} outside 1..{ell}")
        self.ell = ell
        self.depth = depth
        self.widths = [int(w) for w in widths]

    def initial_state(self):
        return 0

    def step(self, depth, state, sym):
        return 0 if sym <= self.widths[depth] else None

    def params(self):
        return {"widths": list(self.widths)}


class AutomatonTree(CylinderTree):
    """Tree generated by an AutomatonRule; classes are reachable alive states."""

    def __init__(self, alphabet, depth, rule, metadata=None):
        meta = {"generator": rule.name}
        meta.update(metadata or {})
        super().__init__(alphabet, depth, meta)
        self.rule = rule
        self.level_states = None  # filled by _compile

    def describe(self):
        return {"name": self.rule.name, "params": self.rule.params()}

    def _compile(self):
        rule = self.rule
        depth = self.depth
        # forward reachability
        levels = [[rule.initial_state()]]
        for d in range(depth):
            seen = {}
            for state in levels[d]:
                for sym in self.alphabet.symbols:
                    t = rule.step(d, state, sym)
                    if t is not None and t not in seen:
                        seen[t] = None
            levels.append(sorted(seen.keys()))
        # backward pruning: a state survives iff some child survives
        alive = [None] * (depth + 1)
        alive[depth] = {s for s in levels[depth] if rule.accepts_final(s)}
        for d in range(depth - 1, -1, -1):
            alive[d] = {
                state
                for state in levels[d]
                if any(
                    rule.step(d, state, sym) in alive[d + 1]
                    for sym in self.alphabet.symbols
                )
            }
        if not alive[0]:
            raise DomainError("empty compact set: no branch reaches the full depth")
        level_keys = [sorted(alive[d]) for d in range(depth + 1)]
        index = [{s: i for i, s in enumerate(ks)} for ks in level_keys]
        edges = []
        for d in range(depth):
            lvl = []
            for i, state in enumerate(level_keys[d]):
                for sym in self.alphabet.symbols:
                    t = rule.step(d, state, sym)
                    if t is not None and t in index[d + 1]:
                        lvl.append((i, sym, index[d + 1][t]))
            lvl.sort()
            edges.append(lvl)
        self.level_states = level_keys
        return _assemble_dag(self.alphabet.size, depth, level_keys, edges)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def full_shift(ell: int, depth: int) -> AutomatonTree:
    return AutomatonTree(Alphabet(ell), depth, FullShiftRule(ell))


def sft(ell: int, depth: int, forbidden) -> AutomatonTree:
    forbidden = [
        word_from_string(f) if isinstance(f, str) else tuple(f) for f in forbidden
    ]
    return AutomatonTree(Alphabet(ell), depth, SftRule(ell, forbidden))


def frequency(targets, delta: float, depth: int) -> AutomatonTree:
    constraint = FrequencyConstraint(targets=tuple(targets), delta=delta)
    ell = len(constraint.targets)
    return AutomatonTree(
        Alphabet(ell), depth, FrequencyRule(constraint, depth),
        metadata={"targets": list(constraint.targets), "delta": delta},
    )


def block_schedule(ell: int, depth: int, blocks, tracked_symbol: int = 1) -> AutomatonTree:
    return AutomatonTree(
        Alphabet(ell), depth, BlockScheduleRule(ell, depth, blocks, tracked_symbol)
    )


def level_branching(ell: int, depth: int, widths) -> AutomatonTree:
    return AutomatonTree(Alphabet(ell), depth, LevelBranchingRule(ell, depth, widths))


def explicit(ell: int, depth: int, nodes) -> ExplicitTree:
    words = [word_from_string(w) if isinstance(w, str) else tuple(w) for w in nodes]
    return ExplicitTree.from_nodes(Alphabet(ell), depth, words)


def union(trees, max_nodes: int = DEFAULT_NODE_BUDGET) -> ExplicitTree:
    if not trees:
        raise DomainError("union needs at least one tree")
    first = trees[0]
    for t in trees[1:]:
        if t.alphabet.size != first.alphabet.size:
            raise DomainError("union requires a common alphabet")
        if t.depth != first.depth:
            raise DomainError("union requires equal depths")
    words = []
    for t in trees:
        words.extend(t.materialize_words(max_nodes))
    return ExplicitTree.from_nodes(first.alphabet, first.depth, words)


_GENERATORS = {
    "full_shift": lambda depth, params: full_shift(params["ell"], depth),
    "sft": lambda depth, params: sft(params["ell"], depth, params["forbidden"]),
    "frequency": lambda depth, params: frequency(
        params["targets"], params["delta"], depth
    ),
    "explicit": lambda depth, params: explicit(
        params["ell"], depth, params["nodes"]
    ),
    "block_schedule": lambda depth, params: block_schedule(
        params["ell"], depth, params["blocks"], params.get("tracked_symbol", 1)
    ),
    "level_branching": lambda depth, params: level_branching(
        params["ell"], depth, params["widths"]
    ),
}


def build_tree(kind: str, depth: int, params: dict = None, **kw) -> CylinderTree:
    """Dispatch to a named generator; see _GENERATORS for the accepted kinds.

    union is not dispatched here because it consumes tree objects, not
    parameters; call union() directly.
    """
    merged = dict(params or {})
    merged.update(kw)
    if kind == "union":
        return union(merged["trees"], merged.get("max_nodes", DEFAULT_NODE_BUDGET))
    if kind not in _GENERATORS:
        raise DomainError(
            f"unknown tree generator {kind!r}; known: {sorted(_GENERATORS)} and 'union'"
        )
    return _GENERATORS[kind](depth, merged)


def depth_counts(tree: CylinderTree) -> list:
    """Exact node counts per depth 0..D (big integers)."""
    return tree.depth_counts()


def random_pruned_tree(rng, ell: int = 2, depth: int = 12, keep_prob: float = None,
                       max_level_nodes: int = 200_000) -> ExplicitTree:
    """A random pruned tree: each node keeps each child independently, with at
    least one child forced, so the result is pruned by construction."""
    alphabet = Alphabet(ell)
    if keep_prob is None:
        keep_prob = float(rng.uniform(0.55, 0.95))
    level_sizes = [1]
    edges = []
    n_current = 1
    for d in range(depth):
        mask = rng.random((n_current, ell)) < keep_prob
        empty = ~mask.any(axis=1)
        if empty.any():
            forced = rng.integers(0, ell, size=int(empty.sum()))
            mask[np.flatnonzero(empty), forced] = True
        lvl = []
        child = 0
        for i in range(n_current):
            for j in range(ell):
                if mask[i, j]:
                    lvl.append((i, j + 1, child))
                    child += 1
        if child > max_level_nodes:
            raise DomainError(
                f"random tree level {d + 1} exceeded {max_level_nodes} nodes"
            )
        edges.append(lvl)
        level_sizes.append(child)
        n_current = child
    level_keys = [list(range(sz)) for sz in level_sizes]
    dag = _assemble_dag(ell, depth, level_keys, edges)
    return ExplicitTree(
        alphabet, depth, dag, metadata={"generator": "random", "keep_prob": keep_prob}
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def tree_to_json_obj(tree: CylinderTree, form: str = "auto",
                     max_nodes: int = DEFAULT_NODE_BUDGET) -> dict:
    """JSON object for a tree: explicit node list or generator spec.

    form "auto" prefers the generator spec when the tree has one, falling
    back to the node list; "nodes" forces materialization.
    """
    if form not in ("auto", "nodes", "generator"):
        raise DomainError(f"unknown serialization form {form!r}")
    spec = tree.describe()
    if form == "generator" and spec is None:
        raise DomainError("tree has no generator description")
    if spec is not None and form in ("auto", "generator"):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "generator",
            "alphabet": tree.alphabet.size,
            "depth": tree.depth,
            "generator": spec,
        }
    words = tree.materialize_words(max_nodes)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "nodes",
        "alphabet": tree.alphabet.size,
        "depth": tree.depth,
        "nodes": [word_to_string(w) for w in words],
    }


def tree_from_json_obj(obj: dict) -> CylinderTree:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(
            f"unsupported tree schema_version {obj.get('schema_version')!r}"
        )
    ell = obj["alphabet"]
    depth = obj["depth"]
    kind = obj.get("kind")
    if kind == "generator":
        gen = obj["generator"]
        params = dict(gen.get("params", {}))
        params.setdefault("ell", ell)
        return build_tree(gen["name"], depth, params)
    if kind == "nodes":
        words = [word_from_string(w) for w in obj["nodes"]]
        _check_prefix_closed(words, context="json node list")
        return explicit(ell, depth, obj["nodes"])
    raise DomainError(f"unknown tree json kind {kind!r}")


def _check_prefix_closed(words, context, lines=None):
    """Reject node lists whose parents are missing; lines gives 1-based line
    numbers per word for text files."""
    have = set(words)
    for i, w in enumerate(words):
        if len(w) > 1 and w[:-1] not in have:
            where = f" (line {lines[i]})" if lines else ""
            raise DomainError(
                f"tree {context} is not prefix-closed{where}: node "
                f"{word_to_string(w)} has no parent {word_to_string(w[:-1])}"
            )


def save_tree_text(tree: CylinderTree, path,
                   max_nodes: int = DEFAULT_NODE_BUDGET) -> None:
    words = tree.materialize_words(max_nodes)
    with open(path, "w") as fh:
        fh.write(f"alphabet {tree.alphabet.size}\n")
        fh.write(f"depth {tree.depth}\n")
        for w in words:
            fh.write(word_to_string(w) + "\n")


def load_tree_text(path) -> ExplicitTree:
    with open(path) as fh:
        raw = fh.read().splitlines()
    if len(raw) < 2:
        raise DomainError(f"tree file {path} is missing header lines")
    try:
        tag_a, ell = raw[0].split()
        tag_d, depth = raw[1].split()
        if tag_a != "alphabet" or tag_d != "depth":
            raise ValueError
        ell, depth = int(ell), int(depth)
    except ValueError:
        raise DomainError(
            f"tree file {path} header must be 'alphabet <l>' then 'depth <D>'"
        ) from None
    words = []
    lines = []
    for lineno, line in enumerate(raw[2:], start=3):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            w = word_from_string(line)
        except DomainError as exc:
            raise DomainError(f"tree file {path} line {lineno}: {exc}") from None
        words.append(w)
        lines.append(lineno)
    _check_prefix_closed(words, context=f"file {path}", lines=lines)
    return explicit(ell, depth, words)


def save_tree(tree: CylinderTree, path, form: str = "auto",
              max_nodes: int = DEFAULT_NODE_BUDGET) -> None:
    path = str(path)
    if path.endswith(".txt"):
        save_tree_text(tree, path, max_nodes)
        return
    obj = tree_to_json_obj(tree, form=form, max_nodes=max_nodes)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_tree(path) -> CylinderTree:
    path = str(path)
    if path.endswith(".txt"):
        return load_tree_text(path)
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"tree file {path} is not valid json: {exc}") from None
    return tree_from_json_obj(obj)
