import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udscascade.autodiff import Tensor, grad_check
from udscascade.autodiff import functional as F
from udscascade.graph import tree_problems
from udscascade.mst import brute_force_tree, max_spanning_tree, tree_score
from udscascade.syntax import SyntaxParser, decode_tree


def enumerate_trees(k):
    """All head vectors with one self-headed root and no cycle (independent of the package)."""
    for heads in itertools.product(range(1, k + 1), repeat=k):
        if sum(h == i + 1 for i, h in enumerate(heads)) != 1:
            continue
        ok = True
        for start in range(k):
            node, steps = start, 0
            while heads[node] != node + 1 and steps <= k:
                node, steps = heads[node] - 1, steps + 1
            ok &= steps <= k
        if ok:
            yield list(heads)


def best_by_enumeration(scores):
    return max(sum(scores[i, h - 1] for i, h in enumerate(t)) for t in enumerate_trees(len(scores)))


class TestMST:
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_exact_against_enumeration(self, k):
        rng = np.random.default_rng(k)
        for _ in range(20):
            s = rng.normal(size=(k, k)) * 3
            heads = max_spanning_tree(s)
            assert not tree_problems(heads)
            assert abs(tree_score(s, heads) - best_by_enumeration(s)) < 1e-9

    def test_packaged_brute_force_agrees(self):
        rng = np.random.default_rng(7)
        s = rng.normal(size=(4, 4))
        assert abs(brute_force_tree(s)[0] - best_by_enumeration(s)) < 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 14), st.integers(0, 2**32 - 1), st.floats(0.1, 100))
    def test_always_a_tree(self, k, seed, scale):
        s = np.random.default_rng(seed).normal(size=(k, k)) * scale
        assert tree_problems(max_spanning_tree(s)) == []

    def test_many_roots_preferred_by_diagonal(self):
        s = np.full((4, 4), -5.0)
        np.fill_diagonal(s, 3.0)
        heads = max_spanning_tree(s)
        assert sum(h == i + 1 for i, h in enumerate(heads)) == 1


class TestDecode:
    def test_greedy_reproduces_forced_gold(self):
        gold = [2, 2, 2, 3]
        arc = np.full((4, 4), -10.0)
        for i, h in enumerate(gold):
            arc[i, h - 1] = 10.0
        labels = np.zeros((4, 4, 3))
        labels[:, :, 2] = 1.0
        for mode in ("greedy", "mst"):
            tree = decode_tree(arc, labels, mode)
            assert tree.heads == gold and tree.labels == [2] * 4 and tree.valid

    def test_greedy_cycle_flagged_mst_repairs(self):
        arc = np.array([[0.0, 9.0, 0.0], [9.0, 0.0, 0.0], [0.0, 9.0, 1.0]])
        labels = np.zeros((3, 3, 1))
        greedy = decode_tree(arc, labels, "greedy")
        assert not greedy.valid and greedy.heads == [2, 1, 2]
        assert decode_tree(arc, labels, "mst").valid

    def test_mst_not_worse_than_valid_greedy(self):
        rng = np.random.default_rng(0)
        compared = 0
        for _ in range(100):
            k = int(rng.integers(2, 6))
            arc = rng.normal(size=(k, k)) * 2
            z = arc - np.log(np.exp(arc).sum(axis=1, keepdims=True))
            g = decode_tree(arc, np.zeros((k, k, 1)), "greedy")
            m = decode_tree(arc, np.zeros((k, k, 1)), "mst")
            if g.valid:
                compared += 1
                assert tree_score(z, m.heads) >= tree_score(z, g.heads) - 1e-12
            assert abs(tree_score(z, m.heads) - best_by_enumeration(z)) < 1e-9
        assert compared > 0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            decode_tree(np.array([[np.nan]]), np.zeros((1, 1, 1)), "mst")


@pytest.fixture
def parser():
    return SyntaxParser(6, 4, 3, np.random.default_rng(0), mlp_dim=5, arc_dim=4, label_dim=4, dropout=0.0)


class TestSyntaxParser:
    def test_shapes(self, parser):
        heads = parser.score(Tensor(np.random.default_rng(1).normal(size=(5, 6))))
        assert heads.arc.shape == (5, 5)
        assert heads.pos.shape == (5, 4)
        assert heads.label_scores().shape == (5, 5, 3)

    def test_head_distribution_rows_sum_to_one(self, parser):
        heads = parser.score(Tensor(np.random.default_rng(1).normal(size=(5, 6))))
        np.testing.assert_allclose(F.softmax(heads.arc).data.sum(axis=1), 1.0, atol=1e-12)

    def test_label_scores_match_label_logits(self, parser):
        heads = parser.score(Tensor(np.random.default_rng(2).normal(size=(4, 6))))
        full = heads.label_scores()
        chosen = [3, 3, 1, 3]
        np.testing.assert_allclose(heads.label_logits(chosen).data,
                                   np.stack([full[i, h - 1] for i, h in enumerate(chosen)]), atol=1e-12)

    def test_uniform_pos_loss(self):
        k = 6
        assert abs(F.cross_entropy(Tensor(np.zeros((3, k))), [0, 1, 5]).item() - np.log(k)) < 1e-12

    def test_teacher_forcing_changes_label_loss(self, parser):
        H = Tensor(np.random.default_rng(3).normal(size=(4, 6)))
        heads = parser.score(H)
        predicted = heads.predicted_heads()
        gold = [h % 4 + 1 for h in predicted]  # guaranteed to differ from the prediction
        forced = parser.tree_loss(heads, gold, [0, 1, 2, 0], teacher_forcing=True).item()
        free = parser.tree_loss(heads, gold, [0, 1, 2, 0], teacher_forcing=False).item()
        assert forced != free

    def test_label_depends_only_on_pair(self, parser):
        rng = np.random.default_rng(4)
        H = rng.normal(size=(5, 6))
        i, h = 1, 3
        before = parser.score(Tensor(H)).label_logits([h + 1] * 5).data[i]
        H2 = H.copy()
        H2[[0, 2, 4]] = H2[[4, 0, 2]]
        after = parser.score(Tensor(H2)).label_logits([h + 1] * 5).data[i]
        np.testing.assert_allclose(before, after, atol=1e-12)

    def test_tree_loss_gradient(self, parser):
        H = Tensor(np.random.default_rng(5).normal(size=(3, 6)))

        def f(H):
            heads = parser.score(H)
            return parser.tree_loss(heads, [2, 2, 2], [0, 2, 1]) + parser.pos_loss(heads, [0, 1, 3])

        assert grad_check(f, [H]) <= 1e-4
