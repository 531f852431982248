"""Independent reference implementations used to freeze expected test values.

Everything here is deliberately written from the raw definitions (maxima over
shifts, explicit subset enumeration, exact Fraction arithmetic) rather than
by calling the package, so that tests compare two independent routes.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def dn_oracle(x, y, n):
    """Time-n distance straight from the definition: max over the first n
    shifts of e^(-(first disagreement index of the shifted words))."""
    if x == y:
        return 0.0
    c = 0
    for a, b in zip(x, y):
        if a != b:
            break
        c += 1
    vals = [math.exp(-(c - k)) for k in range(n) if k <= c]
    return max(vals)


def enumerate_words(ell, length):
    return list(itertools.product(range(1, ell + 1), repeat=length))


def subtree_nodes(nodes, depth):
    """Group a prefix-closed node set (tuples) by length up to depth."""
    by_len = {d: [] for d in range(depth + 1)}
    for w in nodes:
        by_len[len(w)].append(w)
    for d in by_len:
        by_len[d].sort()
    return by_len


def children_map(nodes):
    kids = {w: [] for w in nodes}
    for w in nodes:
        if len(w) > 0:
            kids[w[:-1]].append(w)
    for w in kids:
        kids[w].sort()
    return kids


def _combine_child_choices(per_child_sets):
    """All unions picking one set per child."""
    out = [frozenset()]
    for sets in per_child_sets:
        out = [acc | choice for acc in out for choice in sets]
    return out


def enumerate_minimal_cutsets(kids, selectable, root=()):
    """All minimal cutsets using only selectable nodes.

    kids: word -> sorted child words; selectable: word -> bool. A cutset puts
    a selected ancestor-or-self above every leaf; minimal ones either take
    the node itself or combine one minimal cutset per child. Intended for
    tiny trees (full binary depth 4 has 677).
    """
    def rec(u):
        options = []
        if selectable(u):
            options.append(frozenset([u]))
        if kids[u]:
            options.extend(_combine_child_choices([rec(c) for c in kids[u]]))
        return options

    sets = rec(root)
    if not sets:
        raise AssertionError("no cutset: window excludes the leaves")
    return sets


def enumerate_maximal_antichains(kids, selectable, root=()):
    """All antichains that are maximal within the selectable nodes."""
    def rec(u):
        options = []
        if selectable(u):
            options.append(frozenset([u]))
        if kids[u]:
            options.extend(_combine_child_choices([rec(c) for c in kids[u]]))
        elif not selectable(u):
            options.append(frozenset())
        return options

    return rec(root)


def brute_min_cutset(nodes, depth, weight_of):
    """Minimum-total-weight cutset by enumerating all minimal cutsets.

    nodes: prefix-closed set of tuples including the root ().
    weight_of(word) -> Fraction/float weight, or None when not selectable.
    Returns (best_value, best_set).
    """
    kids = children_map(nodes)
    sets = enumerate_minimal_cutsets(kids, lambda u: weight_of(u) is not None)
    best, best_set = None, None
    for combo in sets:
        val = sum(weight_of(u) for u in combo)
        if best is None or val < best:
            best, best_set = val, combo
    return best, best_set


def brute_max_antichain(nodes, depth, weight_of):
    """Maximum-total-weight antichain by enumerating maximal antichains."""
    kids = children_map(nodes)
    sets = enumerate_maximal_antichains(kids, lambda u: weight_of(u) is not None)
    best, best_set = None, None
    for combo in sets:
        val = sum(weight_of(u) for u in combo)
        if best is None or val > best:
            best, best_set = val, combo
    return best, best_set


def exact_weight(s_float, exponent):
    """The weight e^(-s * exponent) as an exact Fraction of the float e^(-s)."""
    q = Fraction(math.exp(-s_float))
    return q ** exponent


def golden_mean_count(length):
    """Number of words over {1,2} of the given length with no "11" factor.

    Transfer-matrix recursion kept deliberately elementary: a_d words ending
    in 1, b_d ending in 2.
    """
    if length == 0:
        return 1
    a, b = 1, 1  # length 1: "1", "2"
    for _ in range(length - 1):
        a, b = b, a + b
    return a + b


def binomial_window_count(depth, lo, hi):
    """Number of binary words with count of symbol 1 in [lo, hi]."""
    return sum(math.comb(depth, k) for k in range(max(lo, 0), min(hi, depth) + 1))


def conditional_product_masses(nodes, probs):
    """Exact node masses of the per-node renormalized product measure.

    At each node the available children split the node's mass proportionally
    to their symbol weights; pruned symbols renormalize into the survivors.
    Returns a dict word -> Fraction over the prefix-closed node set.
    """
    kids = children_map(set(nodes) | {()})
    masses = {(): Fraction(1)}
    for w in sorted(kids, key=lambda u: (len(u), u)):
        ks = kids[w]
        if not ks or w not in masses:
            continue
        weights = [Fraction(float(probs[k[-1] - 1])) for k in ks]
        tot = sum(weights)
        for k, wt in zip(ks, weights):
            masses[k] = masses[w] * wt / tot if tot else Fraction(0)
    return masses


def markov_product_masses(nodes, transition, initial):
    """Exact node masses of the per-node renormalized Markov measure."""
    kids = children_map(set(nodes) | {()})
    masses = {(): Fraction(1)}
    for w in sorted(kids, key=lambda u: (len(u), u)):
        ks = kids[w]
        if not ks or w not in masses:
            continue
        weights = []
        for k in ks:
            sym = k[-1]
            raw = initial[sym - 1] if not w else transition[w[-1] - 1][sym - 1]
            weights.append(Fraction(float(raw)))
        tot = sum(weights)
        for k, wt in zip(ks, weights):
            masses[k] = masses[w] * wt / tot if tot else Fraction(0)
    return masses


def stage_replay_masses(measure):
    """Independent replay of the staged leftmost-selection measure.

    Materializes the tree, re-selects the lexicographically first nodes per
    (parent node, class) as the records prescribe, and rebuilds every node
    mass from atom weights plus the uniform split below atoms. Only meant
    for small trees.
    """
    tree = measure.tree
    depth = tree.depth
    words = [()] + tree.materialize_words()
    by_depth = {}
    for w in words:
        by_depth.setdefault(len(w), []).append(w)
    for d in by_depth:
        by_depth[d].sort()
    dag = tree.dag
    cls_of = {w: dag.walk_class(w) for w in words}
    desc = {w: 0 for w in words}
    for w in by_depth.get(depth, []):
        desc[w] = 1
    for d in range(depth - 1, -1, -1):
        for w in by_depth.get(d, []):
            desc[w] = sum(desc[k] for k in by_depth.get(d + 1, [])
                          if k[:d] == w)

    recs = measure.records
    selected = {}  # record index -> list of selected words
    for i, rec in enumerate(recs):
        if rec.stage == 1:
            parents = [()]
        else:
            parents = selected[rec.parent]
        chosen = []
        for parent in parents:
            cands = [w for w in by_depth.get(rec.depth, [])
                     if w[:len(parent)] == parent and cls_of[w] == rec.class_id]
            chosen.extend(cands[:rec.count])
            assert len(cands) >= rec.count, "replay ran out of candidates"
        selected[i] = chosen

    final_stage = max(r.stage for r in recs)
    atom_mass = {}
    for i, rec in enumerate(recs):
        if rec.stage != final_stage:
            continue
        for w in selected[i]:
            atom_mass[w] = math.exp(rec.weight_log)
    total = sum(atom_mass.values())

    masses = {}
    for w in words:
        acc = 0.0
        for a, m in atom_mass.items():
            if len(a) >= len(w) and a[:len(w)] == w:
                acc += m  # atom inside [w]
            elif len(a) < len(w) and w[:len(a)] == a:
                acc += m * desc[w] / desc[a]  # [w] inside atom: uniform split
        masses[w] = acc / total
    return masses
