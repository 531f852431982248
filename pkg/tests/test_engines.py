"""Entropy engines against independent oracles.

Core claims:
 - Cutset and antichain DP values match explicit enumeration of all minimal
   cutsets / maximal antichains on small trees, in float and in exact
   rational arithmetic.
 - The weighted (fractional) cover optimum agrees with the integral cutset
   optimum and with an LP solver.
 - Closed-form values on structured trees are reproduced exactly.
 - Bisection recovers ln(l) on full shifts for every scale, and capacity is
   exact there.
 - The regularization ladder drops strictly below the plain packing value
   exactly when the decomposition cuts below shallow admissible nodes.
 - Monotonicity in the window start and under subset trees.
 - Vitali selection returns a disjoint family with the covering guarantees.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from shiftent.engines import (
    bowen_entropy,
    capacity_entropy,
    max_antichain_value,
    min_cutset_value,
    packing_entropy,
    packing_regularized,
    vitali_select,
    weighted_cover_value,
    weighted_entropy,
)
from shiftent.errors import DomainError
from shiftent.trees import (
    explicit,
    full_shift,
    level_branching,
    random_pruned_tree,
    sft,
)
from shiftent.words import BowenBallSpec

from oracles import brute_max_antichain, brute_min_cutset, golden_mean_count

S_GRID = (0.1, 0.3, math.log(2), 1.0)
WINDOWS = ((1, 1), (1, 2), (2, 1))  # (n_window, scale)


def tree_nodes(tree):
    return [()] + tree.materialize_words()


def weight_fn(kind, mode, s, n_window, scale, rational):
    if mode == "ball":
        start = n_window + scale if kind == "cutset" else n_window + scale - 1
    else:
        start = n_window
    q = Fraction(math.exp(-s))

    def weight(u):
        d = len(u)
        if d < start:
            return None
        if kind == "cutset":
            e = d - scale if mode == "ball" else d
        else:
            e = d - scale + 1 if mode == "ball" else d
        return q ** e if rational else math.exp(-s * e)

    return weight


def small_trees():
    rng = np.random.default_rng(11)
    trees = [full_shift(2, 3).to_explicit(), full_shift(2, 4).to_explicit()]
    trees.append(explicit(2, 4, ["1111", "1211", "2111", "2221", "2222"]))
    for _ in range(3):
        trees.append(random_pruned_tree(rng, 2, 4))
    return trees


# ==== 1. brute-force equivalence ====


class TestBruteForce:
    def test_cutset_matches_enumeration(self):
        for tree in small_trees():
            nodes = tree_nodes(tree)
            for s in S_GRID:
                for n_window, scale in WINDOWS:
                    for mode in ("ball", "clopen"):
                        want, _ = brute_min_cutset(
                            nodes, tree.depth,
                            weight_fn("cutset", mode, s, n_window, scale, False),
                        )
                        got = min_cutset_value(tree, s, n_window, scale, mode)
                        assert got.log_value == pytest.approx(
                            math.log(want), abs=1e-10
                        ), f"s={s} N={n_window} m={scale} {mode}"

    def test_antichain_matches_enumeration(self):
        for tree in small_trees():
            nodes = tree_nodes(tree)
            for s in S_GRID:
                for n_window, scale in WINDOWS:
                    for mode in ("ball", "clopen"):
                        want, _ = brute_max_antichain(
                            nodes, tree.depth,
                            weight_fn("antichain", mode, s, n_window, scale, False),
                        )
                        got = max_antichain_value(tree, s, n_window, scale, mode)
                        assert got.log_value == pytest.approx(
                            math.log(want), abs=1e-10
                        ), f"s={s} N={n_window} m={scale} {mode}"

    def test_rational_mode_exact(self):
        # exact Fraction equality between the DP and the enumeration
        for tree in small_trees()[:3]:
            nodes = tree_nodes(tree)
            for s in (0.3, math.log(2)):
                for n_window, scale in ((1, 1), (2, 1)):
                    wf = weight_fn("cutset", "ball", s, n_window, scale, True)
                    want, _ = brute_min_cutset(nodes, tree.depth, wf)
                    got = min_cutset_value(
                        tree, s, n_window, scale, "ball", rational=True
                    )
                    assert got.exact == want
                    wf = weight_fn("antichain", "ball", s, n_window, scale, True)
                    want, _ = brute_max_antichain(nodes, tree.depth, wf)
                    got = max_antichain_value(
                        tree, s, n_window, scale, "ball", rational=True
                    )
                    assert got.exact == want


# ==== 2. fractional cover duality ====


class TestDuality:
    def test_flow_equals_cutset(self):
        rng = np.random.default_rng(23)
        trees = [random_pruned_tree(rng, 2, 8) for _ in range(10)]
        trees.append(sft(2, 12, ["11"]))
        trees.append(full_shift(2, 10))
        for tree in trees:
            for s in S_GRID:
                for n_window, scale in WINDOWS:
                    cut = min_cutset_value(tree, s, n_window, scale)
                    flow = weighted_cover_value(tree, s, n_window, scale)
                    tol = 1e-9 * max(1.0, abs(cut.log_value))
                    assert abs(cut.log_value - flow.log_value) <= tol
                    assert flow.capacity_margin <= 1e-12

    def test_flow_equals_lp(self):
        linprog = pytest.importorskip("scipy.optimize").linprog
        rng = np.random.default_rng(29)
        for tree in [full_shift(2, 3).to_explicit(), random_pruned_tree(rng, 2, 3)]:
            nodes = tree_nodes(tree)
            leaves = [w for w in nodes if len(w) == tree.depth]
            for s, n_window, scale in ((0.4, 1, 1), (0.9, 1, 1), (0.4, 1, 2)):
                wf = weight_fn("cutset", "ball", s, n_window, scale, False)
                sel = [w for w in nodes if wf(w) is not None]
                col = {w: i for i, w in enumerate(sel)}
                a_ub = np.zeros((len(leaves), len(sel)))
                for r, leaf in enumerate(leaves):
                    for i in range(len(leaf) + 1):
                        u = leaf[:i]
                        if u in col:
                            a_ub[r, col[u]] = -1.0
                res = linprog(
                    c=[wf(w) for w in sel], A_ub=a_ub,
                    b_ub=-np.ones(len(leaves)), method="highs",
                )
                assert res.status == 0
                got = weighted_cover_value(tree, s, n_window, scale)
                assert got.log_value == pytest.approx(math.log(res.fun), abs=1e-9)


# ==== 3. frozen closed forms ====


class TestClosedForms:
    def test_full_shift_cutset_value(self):
        # 2^8 leaves at weight e^(-7 ln 2) is exactly 2; every level ties
        got = min_cutset_value(full_shift(2, 8), math.log(2), 1, 1, "ball")
        assert got.log_value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_single_branch(self):
        chain = explicit(2, 10, ["1111111111"])
        s = 0.7
        cut = min_cutset_value(chain, s, 1, 1, "ball")
        assert cut.log_value == pytest.approx(-9 * s, abs=1e-12)
        anti = max_antichain_value(chain, s, 1, 1, "ball")
        assert anti.log_value == pytest.approx(-s, abs=1e-12)
        flow = weighted_cover_value(chain, s, 1, 1, "ball")
        assert flow.log_value == pytest.approx(-9 * s, abs=1e-12)

    def test_full_shift_antichain_value(self):
        # growth 2e^(-1/2) > 1, so the deepest level wins: 1024 e^-5
        got = max_antichain_value(full_shift(2, 10), 0.5, 1, 1, "ball")
        assert got.log_value == pytest.approx(math.log(1024) - 5.0, abs=1e-12)
        assert {e.depth for e in got.selection} == {10}

    def test_golden_mean_clopen_cutset(self):
        # independent two-state recursion in plain arithmetic
        s = math.log((1 + math.sqrt(5)) / 2)
        depth, n_window = 16, 1

        def w(d):
            return math.exp(-s * d) if d >= n_window else None

        fa = w(depth)
        fb = w(depth)
        for d in range(depth - 1, 0, -1):
            fa, fb = min(w(d), fa + fb), min(w(d), fa)
        root = fa + fb
        got = min_cutset_value(sft(2, depth, ["11"]), s, n_window, 1, "clopen")
        assert got.log_value == pytest.approx(math.log(root), abs=1e-12)
        assert 0.9 <= root <= 1.2

    def test_selection_is_a_cutset_and_antichain(self):
        tree = random_pruned_tree(np.random.default_rng(3), 2, 6)
        res = min_cutset_value(tree, 0.5, 2, 1, "ball")
        # selected classes at each depth, expanded to words, must cover leaves
        dag = tree.dag
        chosen = {dag.representative_word(e.class_id) for e in res.selection}
        for leaf in tree.materialize_words():
            if len(leaf) < tree.depth:
                continue
            assert any(leaf[: len(u)] == u for u in chosen)
        # explicit trees carry one node per class, so counts are all one
        assert sum(e.count for e in res.selection) == len(chosen)


# ==== 4. critical exponents ====


class TestCriticalExponents:
    @pytest.mark.parametrize("ell", (2, 3))
    @pytest.mark.parametrize("scale", (1, 2))
    def test_full_shift_bowen(self, ell, scale):
        est = bowen_entropy(full_shift(ell, 16), scale=scale, tol=1e-3,
                            diagnostics=False)
        assert abs(est.value - math.log(ell)) <= 1e-3
        lo, hi = est.bracket
        assert lo <= math.log(ell) <= hi

    @pytest.mark.parametrize("ell", (2, 3))
    @pytest.mark.parametrize("scale", (1, 2))
    def test_full_shift_packing(self, ell, scale):
        est = packing_entropy(full_shift(ell, 16), scale=scale, tol=1e-3,
                              diagnostics=False)
        assert abs(est.value - math.log(ell)) <= 1e-3

    @pytest.mark.parametrize("ell", (2, 3))
    @pytest.mark.parametrize("scale", (1, 2))
    def test_full_shift_capacity_exact(self, ell, scale):
        est = capacity_entropy(full_shift(ell, 16), scale=scale)
        assert est.value == pytest.approx(math.log(ell), abs=1e-12)

    def test_single_branch_zero(self):
        chain = explicit(2, 10, ["1111111111"])
        for est in (
            bowen_entropy(chain, tol=1e-3, diagnostics=False),
            packing_entropy(chain, tol=1e-3, diagnostics=False),
            capacity_entropy(chain),
        ):
            assert est.value <= 1e-3

    def test_capacity_matches_level_counts(self):
        tree = sft(2, 16, ["11"])
        est = capacity_entropy(tree, n_window=8, scale=1)
        want = max(
            math.log(golden_mean_count(d)) / d for d in range(8, 17)
        )
        assert est.value == pytest.approx(want, abs=1e-12)

    def test_window_diagnostics_present(self):
        est = bowen_entropy(full_shift(2, 12), tol=2e-3)
        assert set(est.diagnostics["window_estimates"]) == {1, 3, 6}

    @pytest.mark.parametrize("tree", [full_shift(2, 16), sft(2, 16, ["11"])])
    def test_weighted_route_matches_covering_route(self, tree):
        a = bowen_entropy(tree, tol=1e-3, diagnostics=False)
        b = weighted_entropy(tree, tol=1e-3)
        # duality: both bisect the same crossing, so the brackets overlap
        assert abs(a.value - b.value) <= 2e-3
        assert b.mode == "weighted"


# ==== 5. regularized packing ====


class TestRegularized:
    def test_bushy_top_then_chains(self):
        # full binary to depth 5, single chains to depth 20
        tree = level_branching(2, 20, [2] * 5 + [1] * 15)
        s = 0.1
        reg_default = packing_regularized(tree, s, n_window=1, scale=1)
        # default decomposition depth (window start 1): ladder is flat
        assert reg_default.ladder[0] == pytest.approx(
            math.log(32) - 0.5, abs=1e-12
        )
        assert reg_default.log_value == pytest.approx(
            math.log(32) - 0.5, abs=1e-12
        )
        reg10 = packing_regularized(
            tree, s, n_window=1, scale=1, decomposition_depth=10
        )
        # parts rooted at depth 10 only see their chains: 32 nodes at e^-1
        assert reg10.log_value == pytest.approx(math.log(32) - 1.0, abs=1e-12)
        assert reg10.best_depth >= 6
        assert reg10.log_value < reg_default.log_value - 0.4

    def test_ladder_flat_when_cut_above_window(self):
        tree = full_shift(2, 10)
        reg = packing_regularized(tree, 0.4, n_window=4, scale=1,
                                  decomposition_depth=4)
        vals = list(reg.ladder.values())
        assert max(vals) - min(vals) <= 1e-9


# ==== 6. monotonicity ====


class TestMonotonicity:
    def test_cutset_value_grows_with_window_start(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            tree = random_pruned_tree(rng, 2, 9)
            for s in (0.2, 0.8):
                vals = [
                    min_cutset_value(tree, s, nw, 1, "ball").log_value
                    for nw in (1, 2, 4, 6)
                ]
                assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_subset_tree_has_smaller_values(self):
        rng = np.random.default_rng(37)
        tree = random_pruned_tree(rng, 2, 7)
        leaves = [w for w in tree.materialize_words() if len(w) == 7]
        keep = [w for i, w in enumerate(leaves) if i % 2 == 0] or leaves[:1]
        sub = explicit(2, 7, keep)
        for s in (0.2, 0.8):
            big = min_cutset_value(tree, s, 2, 1).log_value
            small = min_cutset_value(sub, s, 2, 1).log_value
            assert small <= big + 1e-12
            big = max_antichain_value(tree, s, 2, 1).log_value
            small = max_antichain_value(sub, s, 2, 1).log_value
            assert small <= big + 1e-12


# ==== 7. vitali selection ====


class TestVitali:
    def test_nested_chain_keeps_largest(self):
        balls = [
            BowenBallSpec(center=(1, 1, 1, 1, 1), n=2, scale=m) for m in (1, 2, 3)
        ]
        res = vitali_select(balls)
        assert res.selected == [0]
        assert res.factor1_ok and res.factor5_ok

    def test_disjoint_family_kept_whole(self):
        balls = [
            BowenBallSpec(center=(1, 1, 1), n=2, scale=1),
            BowenBallSpec(center=(1, 2, 1), n=2, scale=1),
            BowenBallSpec(center=(2, 1, 1), n=2, scale=1),
        ]
        res = vitali_select(balls)
        assert sorted(res.selected) == [0, 1, 2]
        assert res.factor1_ok and res.factor5_ok

    def test_mixed_horizons(self):
        balls = [
            BowenBallSpec(center=(1, 1, 1), n=2, scale=1),  # cylinder 111
            BowenBallSpec(center=(1, 1), n=1, scale=1),  # cylinder 11
            BowenBallSpec(center=(2, 2, 2, 2), n=3, scale=1),  # cylinder 2222
        ]
        res = vitali_select(balls)
        chosen = {balls[i].cylinder() for i in res.selected}
        assert chosen == {(1, 1), (2, 2, 2, 2)}
        assert res.factor1_ok and res.factor5_ok

    def test_selected_are_pairwise_disjoint(self):
        rng = np.random.default_rng(41)
        words = [tuple(rng.integers(1, 3, size=6)) for _ in range(25)]
        balls = [
            BowenBallSpec(center=w, n=int(rng.integers(1, 4)), scale=1)
            for w in words
        ]
        res = vitali_select(balls)
        cyls = [balls[i].cylinder() for i in res.selected]
        for i, u in enumerate(cyls):
            for v in cyls[i + 1:]:
                k = min(len(u), len(v))
                assert u[:k] != v[:k]
        assert res.factor5_ok


# ==== 8. validation ====


class TestValidation:
    def test_window_too_deep(self):
        with pytest.raises(DomainError, match="exceeds the tree depth"):
            min_cutset_value(full_shift(2, 4), 0.5, n_window=4, scale=1)

    def test_negative_exponent(self):
        with pytest.raises(DomainError, match="s must be >= 0"):
            min_cutset_value(full_shift(2, 4), -0.1)

    def test_bad_mode(self):
        with pytest.raises(DomainError, match="mode"):
            min_cutset_value(full_shift(2, 4), 0.5, mode="sideways")

    def test_bad_scale(self):
        with pytest.raises(DomainError, match="scale index"):
            min_cutset_value(full_shift(2, 4), 0.5, scale=0)
