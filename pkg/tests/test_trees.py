"""Tree generators, the layered class DAG, and serialization.

Core claims:
 - Generator node counts match independent closed forms (powers, Fibonacci
   numbers, binomial windows, product-of-binomials block schedules).
 - Explicit construction takes prefix closures, prunes dead branches, and
   rejects empty results.
 - Automaton compilation agrees with explicit materialization node for node.
 - Text and JSON serialization round-trip exactly and validate input.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftent.errors import DomainError
from shiftent.trees import (
    AutomatonTree,
    ExplicitTree,
    block_schedule,
    build_tree,
    depth_counts,
    explicit,
    frequency,
    full_shift,
    level_branching,
    load_tree,
    random_pruned_tree,
    save_tree,
    sft,
    union,
)

from oracles import binomial_window_count, enumerate_words, golden_mean_count


# ==== 1. generator counts against closed forms ====


class TestGeneratorCounts:
    def test_full_shift_counts(self):
        for ell, depth in ((2, 10), (3, 8)):
            tree = full_shift(ell, depth)
            assert tree.depth_counts() == [ell ** d for d in range(depth + 1)]
            assert tree.dag.level_homogeneous

    def test_full_shift_deep_exact(self):
        tree = full_shift(2, 40)
        assert tree.leaf_count() == 2 ** 40  # exact big integer, no rounding

    def test_golden_mean_fibonacci(self):
        tree = sft(2, 16, ["11"])
        got = tree.depth_counts()
        want = [golden_mean_count(d) for d in range(17)]
        assert got == want

    def test_two_forbidden_words_alternating(self):
        tree = sft(2, 8, ["11", "22"])
        assert tree.depth_counts() == [1] + [2] * 8

    def test_frequency_window_counts(self):
        tree = frequency((0.2, 0.8), 0.05, 26)
        assert tree.leaf_count() == binomial_window_count(26, 4, 6)
        assert tree.leaf_count() == 310960

    def test_frequency_pruning_is_tight(self):
        # the depth-d node count must equal the number of length-d words that
        # can still complete, checked by brute force at small depth
        depth = 8
        tree = frequency((0.5, 0.5), 0.07, depth)
        lo, hi = tree.rule.windows[0]
        for d in range(depth + 1):
            brute = 0
            for w in enumerate_words(2, d):
                ones = sum(1 for s in w if s == 1)
                # completable iff the reachable final count range meets [lo, hi]
                if ones <= hi and ones + (depth - d) >= lo:
                    brute += 1
            assert tree.depth_counts()[d] == brute

    def test_frequency_empty(self):
        with pytest.raises(DomainError, match="empty compact set"):
            frequency((0.2, 0.8), 0.001, 3).dag

    def test_block_schedule_counts(self):
        tree = block_schedule(2, 5, [(3, 1), (2, 2)])
        assert tree.leaf_count() == math.comb(3, 1) * math.comb(2, 2)
        brute = 0
        for w in enumerate_words(2, 5):
            if sum(1 for s in w[:3] if s == 1) == 1 and all(s == 1 for s in w[3:]):
                brute += 1
        assert tree.leaf_count() == brute

    def test_block_schedule_validation(self):
        with pytest.raises(DomainError, match="sum to the depth"):
            block_schedule(2, 5, [(3, 1), (3, 2)])
        with pytest.raises(DomainError, match="requirement"):
            block_schedule(2, 5, [(3, 4), (2, 0)])

    def test_level_branching(self):
        tree = level_branching(2, 3, [1, 2, 1])
        assert tree.depth_counts() == [1, 1, 2, 2]


# ==== 2. explicit trees: closure, pruning, union ====


class TestExplicit:
    def test_prefix_closure_taken(self):
        tree = explicit(2, 3, ["111", "121"])
        words = tree.materialize_words()
        assert (1,) in words and (1, 2) in words and (1, 2, 1) in words

    def test_pruning_removes_dead_branches(self):
        tree = explicit(2, 3, ["111", "12"])  # "12" cannot reach depth 3
        words = tree.materialize_words()
        assert (1, 2) not in words
        assert tree.leaf_count() == 1

    def test_empty_compact_set(self):
        with pytest.raises(DomainError, match="empty compact set"):
            explicit(2, 3, ["11"])

    def test_too_deep_node(self):
        with pytest.raises(DomainError, match="deeper than the tree depth"):
            explicit(2, 3, ["1111"])

    def test_union_idempotent_and_commutative(self):
        a = explicit(2, 3, ["111", "222"])
        b = explicit(2, 3, ["121"])
        ab = union([a, b])
        ba = union([b, a])
        assert ab.materialize_words() == ba.materialize_words()
        aa = union([a, a])
        assert aa.materialize_words() == a.materialize_words()

    def test_union_validation(self):
        a = explicit(2, 3, ["111"])
        b = explicit(2, 4, ["1111"])
        with pytest.raises(DomainError, match="equal depths"):
            union([a, b])

    def test_walk_and_children(self):
        tree = explicit(2, 3, ["111", "121", "222"])
        assert tree.contains((1, 2))
        assert not tree.contains((2, 1))
        assert tree.children_of((1,)) == [1, 2]
        with pytest.raises(DomainError, match="not a node"):
            tree.children_of((2, 1))


# ==== 3. automaton vs explicit agreement ====


class TestAutomatonAgreement:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: sft(2, 9, ["11"]),
            lambda: frequency((0.3, 0.7), 0.12, 9),
            lambda: block_schedule(2, 9, [(4, 2), (5, 1)]),
            lambda: level_branching(3, 6, [3, 1, 2, 1, 3, 1]),
        ],
    )
    def test_same_nodes_as_brute_force(self, make):
        tree = make()
        words = set(tree.materialize_words())
        # brute force: all full-depth words accepted by the rule, plus prefixes
        rule = tree.rule
        ell = tree.alphabet.size
        brute = set()
        for leaf in enumerate_words(ell, tree.depth):
            state = rule.initial_state()
            ok = True
            for d, sym in enumerate(leaf):
                state = rule.step(d, state, sym)
                if state is None:
                    ok = False
                    break
            if ok and rule.accepts_final(state):
                for i in range(1, tree.depth + 1):
                    brute.add(leaf[:i])
        assert words == brute

    def test_to_explicit_matches(self):
        tree = sft(2, 9, ["11"])
        flat = tree.to_explicit()
        assert isinstance(flat, ExplicitTree)
        assert flat.materialize_words() == tree.materialize_words()
        assert flat.depth_counts() == tree.depth_counts()

    def test_representative_words_are_nodes(self):
        tree = frequency((0.3, 0.7), 0.12, 9)
        dag = tree.dag
        for c in range(dag.n_classes):
            w = dag.representative_word(c)
            assert dag.walk_class(w) == c


# ==== 4. random trees ====


class TestRandomTrees:
    def test_pruned_by_construction(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            tree = random_pruned_tree(rng, ell=2, depth=8)
            dag = tree.dag
            # every non-leaf class has at least one child
            for d in range(tree.depth):
                for c in dag.classes_at(d):
                    assert dag.child_ptr[c + 1] > dag.child_ptr[c]

    def test_seed_reproducibility(self):
        t1 = random_pruned_tree(np.random.default_rng(123), ell=2, depth=10)
        t2 = random_pruned_tree(np.random.default_rng(123), ell=2, depth=10)
        assert t1.materialize_words() == t2.materialize_words()


# ==== 5. serialization ====


class TestSerialization:
    def test_text_round_trip(self, tmp_path):
        tree = explicit(2, 3, ["111", "121", "222"])
        p = tmp_path / "t.txt"
        save_tree(tree, p)
        back = load_tree(p)
        assert back.materialize_words() == tree.materialize_words()
        assert back.alphabet.size == 2 and back.depth == 3
        # byte-exact second save
        p2 = tmp_path / "t2.txt"
        save_tree(back, p2)
        assert p.read_text() == p2.read_text()

    def test_json_nodes_round_trip(self, tmp_path):
        tree = explicit(3, 3, ["123", "321", "333"])
        p = tmp_path / "t.json"
        save_tree(tree, p, form="nodes")
        back = load_tree(p)
        assert back.materialize_words() == tree.materialize_words()

    def test_json_generator_round_trip(self, tmp_path):
        for make in (
            lambda: full_shift(3, 6),
            lambda: sft(2, 10, ["11"]),
            lambda: frequency((0.2, 0.8), 0.05, 12),
            lambda: block_schedule(2, 6, [(4, 1), (2, 2)]),
            lambda: level_branching(2, 5, [2, 1, 2, 1, 1]),
        ):
            tree = make()
            p = tmp_path / "g.json"
            save_tree(tree, p)  # auto form prefers the generator spec
            back = load_tree(p)
            assert isinstance(back, AutomatonTree)
            assert back.depth_counts() == tree.depth_counts()
            assert back.materialize_words() == tree.materialize_words()

    def test_text_closure_error_names_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("alphabet 2\ndepth 3\n1\n12\n121\n221\n")
        with pytest.raises(DomainError, match=r"not prefix-closed \(line 6\)"):
            load_tree(p)

    def test_text_header_error(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("alpha 2\ndepth 3\n1\n")
        with pytest.raises(DomainError, match="header"):
            load_tree(p)

    def test_text_bad_symbol_names_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("alphabet 2\ndepth 2\n1\n1x\n")
        with pytest.raises(DomainError, match="line 4"):
            load_tree(p)

    def test_load_prunes_dangling_nodes(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("alphabet 2\ndepth 3\n1\n11\n111\n12\n")
        back = load_tree(p)
        assert (1, 2) not in back.materialize_words()

    def test_load_empty_compact_set(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("alphabet 2\ndepth 3\n1\n11\n")
        with pytest.raises(DomainError, match="empty compact set"):
            load_tree(p)

    @settings(max_examples=30, deadline=None)
    @given(st.sets(st.tuples(*[st.integers(1, 2)] * 4), min_size=1, max_size=12))
    def test_round_trip_random_leaf_sets(self, tmp_path_factory, leaves):
        tree = explicit(2, 4, [tuple(w) for w in leaves])
        tmp = tmp_path_factory.mktemp("rt")
        for name in ("t.txt", "t.json"):
            p = tmp / name
            save_tree(tree, p, form="auto")
            assert load_tree(p).materialize_words() == tree.materialize_words()


# ==== 6. dispatcher and depth counts ====


class TestBuildTree:
    def test_dispatch(self):
        t = build_tree("full_shift", 5, ell=2)
        assert t.leaf_count() == 32
        t = build_tree("sft", 6, ell=2, forbidden=["11"])
        assert t.leaf_count() == golden_mean_count(6)
        with pytest.raises(DomainError, match="unknown tree generator"):
            build_tree("mystery", 5, ell=2)

    def test_depth_counts_function(self):
        t = full_shift(2, 6)
        assert depth_counts(t) == [2 ** d for d in range(7)]
        assert all(isinstance(c, int) for c in depth_counts(t))
