import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udscascade.evaluation import (attribute_metrics, binary_f1, corpus_s_score, pearson, s_score,
                                   s_score_bruteforce, syntax_metrics, threshold_candidates, tune_threshold)
from udscascade.graph import ROOT_ID, SemanticGraph, SemEdge, linearize_arborescence
from udscascade.synthetic import synthetic_records


def triples(sent, graph):
    return linearize_arborescence(sent, graph)


def oracle_score(pred, gold):
    """Best matched-triple count over every partial same-kind injection (test-local enumeration)."""
    p_trip, g_trip = triples(*pred), Counter(triples(*gold))
    p_nodes, g_nodes = pred[1].semantic_nodes, gold[1].semantic_nodes
    options = [[None] + [g.id for g in g_nodes if g.kind is p.kind] for p in p_nodes]
    best = 0
    for choice in itertools.product(*options):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        rename = {p.id: c for p, c in zip(p_nodes, choice)}
        rename[ROOT_ID] = ROOT_ID
        mapped = Counter()
        for t in p_trip:
            if t[0] == "semedge":
                if rename[t[1]] is not None and rename[t[2]] is not None:
                    mapped[(t[0], rename[t[1]], rename[t[2]], t[3])] += 1
            elif t[0] == "rootedge":
                if rename[t[2]] is not None:
                    mapped[(t[0], t[1], rename[t[2]])] += 1
            elif rename[t[1]] is not None:
                mapped[(t[0], rename[t[1]]) + t[2:]] += 1
        best = max(best, sum((mapped & g_trip).values()))
    return best


def perturb(graph, rng, labels=("arg", "head", "other")):
    """Relabel, redirect or drop edges and drop nodes; validity is not preserved."""
    nodes = list(graph.nodes)
    sem = [n for n in nodes if n.id != ROOT_ID]
    if len(sem) > 1 and rng.random() < 0.5:
        gone = sem[rng.integers(len(sem))].id
        nodes = [n for n in nodes if n.id != gone]
    ids = [n.id for n in nodes]
    edges = []
    for e in graph.edges:
        if e.src not in ids or e.dst not in ids or rng.random() < 0.15:
            continue
        dst = e.dst if rng.random() < 0.7 else ids[rng.integers(1, len(ids))] if len(ids) > 1 else e.dst
        label = e.label if rng.random() < 0.7 else labels[rng.integers(len(labels))]
        edges.append(SemEdge(e.src, dst, label))
    return SemanticGraph(tuple(nodes), tuple(edges))


@pytest.fixture(scope="module")
def small_pairs():
    recs = [r for r in synthetic_records(150, seed=3) if len(r[1].semantic_nodes) <= 5]
    rng = np.random.default_rng(0)
    return [((s, perturb(g, rng)), (s, g)) for s, g, _ in recs[:40]]


class TestSScore:
    def test_identity(self, records):
        for s, g, _ in records:
            r = s_score((s, g), (s, g))
            assert r.precision == r.recall == r.f1 == 100.0

    def test_empty_graphs(self, records):
        s = records[0][0]
        empty = SemanticGraph.root_only()
        assert s_score((s, empty), (s, empty)).f1 == 100.0
        assert s_score((s, empty), (s, records[0][1])).f1 == 0.0

    def test_brute_force_matches_enumeration(self, small_pairs):
        for pred, gold in small_pairs:
            assert s_score_bruteforce(pred, gold).matched == oracle_score(pred, gold)

    def test_hill_climbing_never_exceeds_exact(self, small_pairs):
        for pred, gold in small_pairs:
            assert s_score(pred, gold, restarts=3).matched <= oracle_score(pred, gold)

    def test_counts_match_triples(self, small_pairs):
        for pred, gold in small_pairs:
            r = s_score(pred, gold)
            assert r.predicted == len(triples(*pred)) and r.gold == len(triples(*gold))

    def test_removing_a_node_keeps_precision(self, records):
        for s, g, _ in records:
            leaves = [n for n in g.semantic_nodes if not any(e.src == n.id for e in g.edges)]
            if len(g.semantic_nodes) < 2 or not leaves:
                continue
            gone = leaves[0].id
            pred = SemanticGraph(tuple(n for n in g.nodes if n.id != gone),
                                 tuple(e for e in g.edges if gone not in (e.src, e.dst)))
            r = s_score((s, pred), (s, g))
            assert r.precision == 100.0 and r.recall < 100.0

    def test_monotone_in_restarts(self, small_pairs):
        for pred, gold in small_pairs[:15]:
            scores = [s_score(pred, gold, restarts=k, seed=4).matched for k in (1, 2, 4, 8)]
            assert scores == sorted(scores)

    def test_swap_symmetry(self, small_pairs):
        for pred, gold in small_pairs:
            a = s_score_bruteforce(pred, gold)
            b = s_score_bruteforce(gold, pred)
            assert a.matched == b.matched
            assert abs(a.precision - b.recall) < 1e-12 and abs(a.f1 - b.f1) < 1e-12

    def test_alignment_is_injective_same_kind(self, small_pairs):
        for pred, gold in small_pairs:
            r = s_score(pred, gold, restarts=2)
            targets = list(r.alignment.values())
            assert len(targets) == len(set(targets))
            for p, g in r.alignment.items():
                assert pred[1].node(p).kind is gold[1].node(g).kind

    def test_restarts_validated(self, records):
        s, g, _ = records[0]
        with pytest.raises(ValueError):
            s_score((s, g), (s, g), restarts=0)

    def test_brute_force_cap(self):
        recs = [r for r in synthetic_records(200, seed=5) if len(r[1].semantic_nodes) > 8]
        s, g, _ = recs[0]
        with pytest.raises(ValueError, match="8"):
            s_score_bruteforce((s, g), (s, g))

    def test_corpus_is_micro_averaged(self, small_pairs):
        preds, golds = zip(*small_pairs[:10])
        p, r, f1, per_pair = corpus_s_score(list(preds), list(golds), restarts=2)
        matched = sum(x.matched for x in per_pair)
        assert abs(p - 100 * matched / sum(x.predicted for x in per_pair)) < 1e-12
        assert abs(r - 100 * matched / sum(x.gold for x in per_pair)) < 1e-12

    def test_corpus_length_mismatch(self, small_pairs):
        with pytest.raises(ValueError):
            corpus_s_score([small_pairs[0][0]], [])


class TestSyntaxMetrics:
    def test_hand_counted(self):
        pred = [([2, 2, 2], ["a", "root", "b"], ["N", "V", "N"]), ([1], ["root"], ["X"])]
        gold = [([2, 2, 1], ["a", "root", "c"], ["N", "V", "V"]), ([1], ["root"], ["X"])]
        m = syntax_metrics(pred, gold)
        assert m == {"uas": 75.0, "las": 75.0, "pos": 75.0}

    def test_label_only_error(self):
        m = syntax_metrics([([1, 1], ["root", "x"], ["A", "B"])], [([1, 1], ["root", "y"], ["A", "B"])])
        assert m["uas"] == 100.0 and m["las"] == 50.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            syntax_metrics([([1], ["root"], ["X"])], [([1, 1], ["root", "a"], ["X", "Y"])])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 10))
    def test_las_never_above_uas(self, seed, k):
        rng = np.random.default_rng(seed)

        def rand():
            return (list(rng.integers(1, k + 1, k)), list(rng.choice(["a", "b"], k)), list(rng.choice(["X", "Y"], k)))

        m = syntax_metrics([rand()], [rand()])
        assert m["las"] <= m["uas"]


class TestAttributeMetrics:
    def test_perfect_and_inverted_correlation(self):
        gold = np.array([-2.0, -1.0, 0.5, 3.0])
        assert abs(pearson(gold, gold) - 1.0) < 1e-12
        assert abs(pearson(-gold, gold) + 1.0) < 1e-12

    def test_zero_variance(self):
        assert pearson(np.ones(3), np.arange(3.0)) is None

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 10), st.floats(-5, 5))
    def test_rho_affine_invariant(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        pred, gold = rng.normal(size=20), rng.normal(size=20)
        assert abs(pearson(pred * scale + shift, gold) - pearson(pred, gold)) < 1e-9

    def test_binary_f1(self):
        pred = np.array([1, 1, 0, 0], dtype=bool)
        gold = np.array([1, 0, 1, 0], dtype=bool)
        assert binary_f1(pred, gold) == 50.0

    def test_candidates_cover_extremes(self):
        c = threshold_candidates(np.array([0.2, -1.0, 0.2, 3.0]))
        np.testing.assert_allclose(c, [-2.0, -0.4, 1.6, 4.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_swept_threshold_not_worse_than_zero(self, seed):
        rng = np.random.default_rng(seed)
        pred, gold = rng.normal(size=15), rng.normal(size=15)
        _, best = tune_threshold(pred, gold)
        assert best >= binary_f1(pred > 0, gold > 0)

    def test_tuned_threshold_is_exhaustive(self):
        rng = np.random.default_rng(1)
        pred, gold = rng.normal(size=12), rng.normal(size=12)
        _, best = tune_threshold(pred, gold)
        brute = max(binary_f1(pred > t, gold > 0) for t in np.linspace(-4, 4, 4001))
        assert best >= brute

    def test_small_attributes_skipped(self):
        report = attribute_metrics({"a": (np.array([1.0]), np.array([1.0])),
                                    "b": (np.array([1.0, -1.0]), np.array([2.0, -2.0]))})
        assert report.skipped == ["a"] and set(report.table) == {"b"}
        assert abs(report.rho - 1.0) < 1e-12 and report.f1 == 100.0

    def test_no_positive_gold_excluded_from_f1(self):
        report = attribute_metrics({"neg": (np.array([0.5, -1.0, 0.3]), np.array([-1.0, -2.0, -0.5])),
                                    "ok": (np.array([1.0, -1.0]), np.array([2.0, -2.0]))})
        assert report.table["neg"]["no_positives"] and report.table["neg"]["f1"] is None
        assert report.f1 == 100.0

    def test_macro_average(self):
        report = attribute_metrics({"x": (np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0])),
                                    "y": (np.array([3.0, 2.0, 1.0]), np.array([1.0, 2.0, 3.0]))})
        assert abs(report.rho) < 1e-12
