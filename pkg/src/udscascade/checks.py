"""Finite-difference gradient suite and a quick invariant self-check.

Both are used by the command line and by the test-suite.
"""

from __future__ import annotations

import time
from collections.abc import Callable

import numpy as np

from .autodiff import Tensor, grad_check
from .autodiff import functional as F
from .encoder import Encoder, EncoderConfig
from .graph import WORD_LABELS
from .injection import AttentionRefiner, GCNRefiner, SpanRefiner, head_adjacency, label_distribution
from .model import TERMS, ModelConfig, ParserModel, Vocabularies
from .syntax import SyntaxParser
from .training import LossWeights, attribute_value_loss, total_loss

TOLERANCE = 1e-4

TINY = dict(embed_dim=5, hidden_dim=6, mlp_dim=6, arc_dim=4, label_dim=4, pair_dim=4, attr_dim=3,
            attr_channels=2, dropout=0.0)


def _tiny_records(seed: int, n: int = 2):
    from .synthetic import synthetic_records

    return synthetic_records(n, seed=seed, max_depth=1, max_len=9)


def _tiny_model(records, mode: str, seed: int, **overrides) -> ParserModel:
    cfg = ModelConfig(**{**TINY, "syntax_mode": mode, **overrides})
    vocabs = Vocabularies.from_records(records, min_count=1)
    return ParserModel(cfg, vocabs, np.random.default_rng(seed))


def _params(module, names=None):
    return [p for n, p in module.named_parameters() if names is None or any(n.startswith(k) for k in names)]


def _probe(rng, shape):
    return Tensor(rng.normal(size=shape))


def gradient_suite(seed: int = 7) -> dict[str, Callable[[], float]]:
    """Named checks; each returns the worst norm-wise relative error."""
    rng = np.random.default_rng(seed)
    checks: dict[str, Callable[[], float]] = {}
    # small shapes drawn from the seed so repeated runs cover different sizes
    K, n, m = (int(x) for x in rng.integers(2, 6, size=3))
    d = 6

    def prim(name, fn, *shapes, positive=False):
        def run():
            inputs = [Tensor(np.abs(rng.normal(size=s)) + 0.5 if positive else rng.normal(size=s))
                      for s in shapes]
            return grad_check(fn, inputs)
        checks[name] = run

    w = _probe(rng, (n, m))
    targets = rng.integers(0, m, n)
    prim("primitive.arithmetic", lambda a, b: F.sum((a * b - a / (b * b + 1.0)) * w), (n, m), (n, m))
    prim("primitive.activations", lambda a: F.sum((F.tanh(a) + F.sigmoid(a) + F.relu(a)) * w), (n, m))
    prim("primitive.exp_log", lambda a: F.sum(F.log(a) * F.exp(a * 0.1) * w), (n, m), positive=True)
    prim("primitive.softmax", lambda a: F.sum(F.softmax(a) * w) + F.sum(F.log_softmax(a, axis=0) * w), (n, m))
    prim("primitive.layer_norm", lambda a, g, b: F.sum(F.layer_norm(a, g, b) * w), (n, m), (m,), (m,))
    mc = _probe(rng, (n, m + 2))
    prim("primitive.matmul_concat", lambda a, b: F.sum(F.concat([F.matmul(a, b), a], axis=1) * mc),
         (n, m), (m, 2))
    prim("primitive.losses", lambda a: F.cross_entropy(a, targets) + F.binary_cross_entropy(a, (w.data > 0) * 1.0)
         + F.mse(a, w.data, np.abs(w.data)), (n, m))
    lw = _probe(rng, (K, K, 3))
    prim("biaffine.arc_scores", lambda a, b, W: F.sum(F.biaffine(a, b, W) * lw[:, :, 0]), (K, n), (K, n),
         (n + 1, n + 1))
    prim("biaffine.channel_scores", lambda a, b, W: F.sum(F.biaffine(a, b, W) * lw), (K, n), (K, n),
         (3, n + 1, n + 1))
    lb = _probe(rng, (K, 5))
    prim("bilinear.paired", lambda a, b, W: F.sum(F.bilinear(a, b, W) * lb), (K, n), (K, m), (n, m, 5))
    lh = _probe(rng, (1, 3))
    prim("lstm.step", lambda x, h, c, wi, wh, b: F.sum(F.lstm_step(x, h, c, wi, wh, b)[0] * lh)
         + F.sum(F.lstm_step(x, h, c, wi, wh, b)[1] * lh), (1, m), (1, 3), (1, 3), (m, 12), (3, 12), (12,))
    ls = _probe(rng, (K, 3))
    prim("lstm.sequence", lambda x, wi, wh, b: F.sum(F.lstm(x, wi, wh, b, reverse=True) * ls),
         (K, m), (m, 12), (3, 12), (12,))

    def value_loss(pred):
        gold = np.array([[1.5, -2.0, 0.3], [-0.5, 2.5, -1.0]])
        mask = np.array([[1, 0, 1], [1, 1, 1]])
        return attribute_value_loss(pred, gold, mask)

    prim("loss.attribute_value", value_loss, (2, 3))

    for kind in ("bilstm", "transformer"):
        def encoder_check(kind=kind):
            enc = Encoder(EncoderConfig(7, 4, 6, 1, kind, heads=2, dropout=0.0), np.random.default_rng(seed))
            probe = _probe(rng, (K, 6))
            ids = rng.integers(1, 7, K)
            return grad_check(lambda *_: F.sum(enc(ids) * probe), enc.parameters())
        checks[f"encoder.{kind}"] = encoder_check

    def syntax_check():
        parser = SyntaxParser(d, 3, 4, np.random.default_rng(seed), 6, 4, 4, dropout=0.0)
        H = _probe(rng, (K, d))
        heads = [1] + [int(rng.integers(1, i + 1)) for i in range(1, K)]  # attach to an earlier token
        labels, pos = rng.integers(0, 4, K), rng.integers(0, 3, K)

        def f(*_):
            sc = parser.score(H)
            return parser.tree_loss(sc, heads, labels) + parser.pos_loss(sc, pos)
        return grad_check(f, parser.parameters() + [H])
    checks["syntax.tree_and_pos_loss"] = syntax_check

    def gcn_check():
        r = np.random.default_rng(seed)
        parser = SyntaxParser(d, 3, 4, r, 6, 4, 4, dropout=0.0)
        gcn = GCNRefiner(d, 4, r, layers=2)
        from .autodiff import MLP

        cls = MLP(d, 6, len(WORD_LABELS), r)
        H = _probe(rng, (3, d))

        def f(*_):
            sc = parser.score(H)
            out = gcn(H, head_adjacency(sc), label_distribution(sc))
            return F.cross_entropy(cls(out), [1, 2, 0])
        return grad_check(f, _params(parser, ["arc", "w_arc", "lab", "w_label", "b_label"])
                          + gcn.parameters() + [H])
    checks["injection.gcn"] = gcn_check

    def attention_check():
        r = np.random.default_rng(seed)
        parser = SyntaxParser(d, 3, 4, r, 6, 4, 4, dropout=0.0)
        att = AttentionRefiner(d, 4, 4, r)
        H = _probe(rng, (K, d))
        probe = _probe(rng, (K, d))

        def f(*_):
            sc = parser.score(H)
            return F.sum(att(H, sc, head_adjacency(sc)) * probe)
        return grad_check(f, _params(parser, ["arc", "w_arc", "lab"]) + att.parameters() + [H])
    checks["injection.attention"] = attention_check

    def span_refine_check():
        ref = SpanRefiner(d, np.random.default_rng(seed))
        G_m, G_n = _probe(rng, (3, d)), _probe(rng, (4, d))
        probe = _probe(rng, (3, d))
        return grad_check(lambda a, b, *_: F.sum(ref(a, b, [0, 2, 2, 1]) * probe),
                          [G_m, G_n] + ref.parameters())
    checks["injection.span_refine"] = span_refine_check

    records = _tiny_records(seed)

    def stage_check(term, names):
        def run():
            model = _tiny_model(records, "none", seed)
            ex = model.prepare(records[0])
            params = _params(model.cascade, names) + _params(model.encoder, ["projection"])
            return grad_check(lambda *_: model.sentence_losses(ex, (term,))[term], params)
        return run

    checks["cascade.word_classification"] = stage_check("cls", ["classifier"])
    checks["cascade.span_assignment"] = stage_check("span", ["span_", "w_span", "node_proj", "type_embedding"])
    checks["cascade.edge_typing"] = stage_check("edge", ["edge_", "w_edge", "root", "node_proj"])
    checks["cascade.attribute_mask"] = stage_check("attr_mask", ["node_attr", "attr_", "w_attr", "edge_attr"])
    checks["cascade.attribute_values"] = stage_check("attr_value", ["node_attr", "attr_", "w_attr", "edge_attr"])

    def full_objective():
        model = _tiny_model(records, "gcn", seed)
        exs = [model.prepare(r) for r in records]
        weights = LossWeights()
        params = [p for p in model.parameters() if p.size <= 200]

        def f(*_):
            losses = [total_loss(model.sentence_losses(ex), weights, "gcn") for ex in exs]
            return (losses[0] + losses[1]) * 0.5
        return grad_check(f, params)
    checks["training.full_objective_two_sentences"] = full_objective
    return checks


def run_gradient_suite(seed: int = 7, names=None) -> dict[str, float]:
    results = {}
    for name, fn in gradient_suite(seed).items():
        if names is None or name in names:
            results[name] = fn()
    return results


# -- self-check -------------------------------------------------------------------

def run_selfcheck(seed: int = 0, scale: float = 1.0) -> dict[str, tuple[bool, str]]:
    """Fast versions of the structural and metric invariants; ``scale`` shrinks trial counts."""
    from .augmentation import TrigramLM, domain_score, extract_relations, filter_invalid
    from .evaluation import (attribute_metrics, binary_f1, s_score, s_score_bruteforce, syntax_metrics,
                             tune_threshold)
    from .graph import derive_word_labels, dumps_graphs, linearize_arborescence, loads_graphs, tree_problems
    from .mst import max_spanning_tree
    from .synthetic import synthetic_records
    from .training import harmonic_composite

    rng = np.random.default_rng(seed)
    n = max(5, int(100 * scale))
    out: dict[str, tuple[bool, str]] = {}

    def record(name, fn):
        t = time.time()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crash of the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out[name] = (bool(ok), f"{detail} ({time.time() - t:.2f}s)")

    records = synthetic_records(n, seed=seed)

    def roundtrip():
        again = loads_graphs(dumps_graphs(records))
        return all(a[0] == b[0] and a[1] == b[1] and a[2] == b[2] for a, b in zip(records, again)), f"{n} records"

    def word_labels():
        for s, g, _ in records:
            labels = derive_word_labels(s, g)
            if len(labels) != len(s):
                return False, "label count differs from token count"
            size = 2 * len(g.semantic_nodes) + sum(len(x.span) - 1 for x in g.semantic_nodes) + len(g.edges)
            if len(linearize_arborescence(s, g)) != size:
                return False, "linearization size mismatch"
        return True, "labels total, triple counts match"

    def mst():
        for _ in range(n):
            k = int(rng.integers(1, 12))
            if tree_problems(max_spanning_tree(rng.normal(size=(k, k)) * 5)):
                return False, "invalid tree"
        return True, f"{n} random matrices"

    def composite():
        for _ in range(n):
            a, b = rng.exponential(size=2)
            c = harmonic_composite(a, b)
            if not (min(a, b) - 1e-12 <= c <= max(a, b) + 1e-12) or abs(harmonic_composite(a, a) - a) > 1e-12:
                return False, f"composite({a}, {b}) = {c}"
        return True, f"{n} pairs"

    def matching():
        worse = 0
        for k in range(n):
            a, b = records[k], records[(k + 1) % n]
            if max(len(a[1].semantic_nodes), len(b[1].semantic_nodes)) > 6:
                continue
            pred, gold = (a[0], a[1]), (b[0], b[1])
            hc, bf = s_score(pred, gold, 5, [seed, k]), s_score_bruteforce(pred, gold)
            if hc.matched > bf.matched:
                return False, "hill-climbing exceeded the exact optimum"
            worse += hc.matched < bf.matched
            if s_score(pred, pred).f1 != 100.0:
                return False, "identity pair below 100"
        return True, f"{worse} sub-optimal of {n}"

    def metrics():
        gold = [(list(s.heads), list(s.deprels), s.pos) for s, _, _ in records]
        pred = [([1] * len(h), l[::-1], p) for h, l, p in gold]
        m = syntax_metrics(pred, gold)
        vals = rng.normal(size=50)
        ok = m["uas"] >= m["las"] and syntax_metrics(gold, gold)["las"] == 100.0
        rep = attribute_metrics({"x": (vals, vals)})
        neg = attribute_metrics({"x": (-vals, vals)})
        ok = ok and abs(rep.rho - 1) < 1e-12 and abs(neg.rho + 1) < 1e-12
        noisy = vals + rng.normal(size=50)
        _, f1 = tune_threshold(noisy, vals)
        ok = ok and f1 >= binary_f1(noisy > 0, vals > 0)
        return ok, f"uas {m['uas']:.1f} >= las {m['las']:.1f}"

    def extraction():
        for s, g, _ in records:
            if extract_relations(s) != g or g.problems(len(s)):
                return False, "extraction not reproducible or invalid"
        kept, rep = filter_invalid(records)
        again, _ = filter_invalid(kept)
        return len(again) == len(kept), f"kept {rep.kept}"

    def lm():
        sents = [r[0].forms for r in records]
        a, b = TrigramLM(sents), TrigramLM(sents)
        return all(domain_score(s, a, b) == 0.0 for s in sents), "identical models score 0"

    def parses():
        model = _tiny_model(records[:5], "gcn", seed)
        crashes = 0
        for s, _, _ in records:
            try:
                o = model.parse(s)
                if not (o.valid or o.degenerate or o.problems):
                    crashes += 1
            except Exception:
                crashes += 1
        return crashes == 0, f"{len(records)} random-parameter parses"

    for name, fn in (("graph.roundtrip", roundtrip), ("graph.word_labels", word_labels), ("mst.valid", mst),
                     ("loss.composite", composite), ("eval.matching", matching), ("eval.metrics", metrics),
                     ("augment.extraction", extraction), ("augment.lm", lm), ("parse.totality", parses)):
        record(name, fn)
    return out


__all__ = ["TOLERANCE", "TERMS", "gradient_suite", "run_gradient_suite", "run_selfcheck"]
