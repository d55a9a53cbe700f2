"""Graph matching scores, attachment scores and attribute metrics."""

from __future__ import annotations

import itertools
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import ROOT_ID, AnnotatedSentence, NodeKind, SemanticGraph, linearize_arborescence

BRUTE_FORCE_CAP = 8


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map, in-process unless ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


# -- S-score -------------------------------------------------------------------

@dataclass
class MatchResult:
    alignment: dict[str, str]
    matched: int
    predicted: int
    gold: int

    @property
    def precision(self) -> float:
        if self.predicted == 0:
            return 100.0 if self.gold == 0 else 0.0
        return 100.0 * self.matched / self.predicted

    @property
    def recall(self) -> float:
        if self.gold == 0:
            return 100.0 if self.predicted == 0 else 0.0
        return 100.0 * self.matched / self.gold

    @property
    def f1(self) -> float:
        return f_score(self.precision, self.recall)

    def as_dict(self) -> dict:
        return {"matched": self.matched, "predicted": self.predicted, "gold": self.gold,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def f_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


class _Problem:
    """Precomputed scoring tables for aligning one predicted graph to one gold graph."""

    def __init__(self, pred, gold):
        p_sent, p_graph = pred
        g_sent, g_graph = gold
        self.pred_triples = linearize_arborescence(p_sent, p_graph)
        self.gold_triples = linearize_arborescence(g_sent, g_graph)
        self.p_nodes = [n for n in p_graph.semantic_nodes]
        self.g_nodes = [n for n in g_graph.semantic_nodes]
        p_index = {n.id: i for i, n in enumerate(self.p_nodes)}
        g_index = {n.id: i for i, n in enumerate(self.g_nodes)}

        def unary(triples, index):
            table = [Counter() for _ in index]
            for t in triples:
                if t[0] == "rootedge":
                    table[index[t[2]]][("rootedge",)] += 1
                elif t[0] != "semedge":
                    table[index[t[1]]][(t[0],) + tuple(t[2:])] += 1
            return table

        pu, gu = unary(self.pred_triples, p_index), unary(self.gold_triples, g_index)
        self.U = np.array([[sum((a & b).values()) for b in gu] for a in pu], dtype=np.int64).reshape(
            len(self.p_nodes), len(self.g_nodes))
        self.p_edges = [(p_index[t[1]], p_index[t[2]], t[3]) for t in self.pred_triples if t[0] == "semedge"]
        self.g_edges = Counter((g_index[t[1]], g_index[t[2]], t[3]) for t in self.gold_triples if t[0] == "semedge")
        self.candidates = {}
        for kind in (NodeKind.PREDICATE, NodeKind.ARGUMENT):
            self.candidates[kind] = ([i for i, n in enumerate(self.p_nodes) if n.kind is kind],
                                     [j for j, n in enumerate(self.g_nodes) if n.kind is kind])

    def score(self, mapping: list[int]) -> int:
        total = sum(int(self.U[p, g]) for p, g in enumerate(mapping) if g >= 0)
        mapped = Counter((mapping[a], mapping[b], lab) for a, b, lab in self.p_edges
                         if mapping[a] >= 0 and mapping[b] >= 0)
        return total + sum((mapped & self.g_edges).values())

    def result(self, mapping: list[int], matched: int) -> MatchResult:
        align = {self.p_nodes[p].id: self.g_nodes[g].id for p, g in enumerate(mapping) if g >= 0}
        align[ROOT_ID] = ROOT_ID
        return MatchResult(align, matched, len(self.pred_triples), len(self.gold_triples))

    # -- initializations -------------------------------------------------------
    def greedy_mapping(self) -> list[int]:
        mapping = [-1] * len(self.p_nodes)
        for p_list, g_list in self.candidates.values():
            free = list(g_list)
            for p in p_list:
                if not free:
                    break
                node = self.p_nodes[p]
                best = max(free, key=lambda g: (self.g_nodes[g].center == node.center, self.U[p, g],
                                                -abs(self.g_nodes[g].center - node.center), -g))
                mapping[p] = best
                free.remove(best)
        return mapping

    def random_mapping(self, rng: np.random.Generator) -> list[int]:
        mapping = [-1] * len(self.p_nodes)
        for p_list, g_list in self.candidates.values():
            order = rng.permutation(len(g_list))
            for p, k in zip(p_list, order):
                mapping[p] = g_list[k]
        return mapping

    def climb(self, mapping: list[int]) -> tuple[list[int], int]:
        """Steepest-ascent over single moves (to an unused node) and swaps."""
        current = self.score(mapping)
        while True:
            best_gain, best_map = 0, None
            for p_list, g_list in self.candidates.values():
                used = {mapping[p] for p in p_list}
                for p in p_list:
                    for g in g_list:
                        if g == mapping[p]:
                            continue
                        trial = list(mapping)
                        if g in used:
                            other = trial.index(g)
                            trial[other] = mapping[p]
                        trial[p] = g
                        gain = self.score(trial) - current
                        if gain > best_gain:
                            best_gain, best_map = gain, trial
            if best_map is None:
                return mapping, current
            mapping, current = best_map, current + best_gain


def s_score(pred, gold, restarts: int = 5, seed=0) -> MatchResult:
    """Hill-climbing alignment score of ``pred`` against ``gold``.

    ``pred`` and ``gold`` are ``(AnnotatedSentence, SemanticGraph)`` pairs.
    The first start is a greedy center-word matching, the others are random
    injective same-kind maps.  ``seed`` may be an int or a sequence.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    prob = _Problem(pred, gold)
    rng = np.random.default_rng(seed)
    best_map, best = prob.climb(prob.greedy_mapping())
    for _ in range(restarts - 1):
        mapping, score = prob.climb(prob.random_mapping(rng))
        if score > best:
            best_map, best = mapping, score
    return prob.result(best_map, best)


def s_score_bruteforce(pred, gold) -> MatchResult:
    """Exact best alignment by enumeration over maximal injective same-kind maps.

    Adding an alignment pair never removes matched triples, so a maximal
    injection reaches the optimum over all partial ones.
    """
    prob = _Problem(pred, gold)
    if max(len(prob.p_nodes), len(prob.g_nodes)) > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_CAP} semantic nodes per side")
    per_kind = []
    for p_list, g_list in prob.candidates.values():
        if len(p_list) <= len(g_list):
            options = [list(zip(p_list, perm)) for perm in itertools.permutations(g_list, len(p_list))]
        else:
            options = [list(zip(perm, g_list)) for perm in itertools.permutations(p_list, len(g_list))]
        per_kind.append(options)
    best, best_map = -1, None
    for combo in itertools.product(*per_kind):
        mapping = [-1] * len(prob.p_nodes)
        for pairs in combo:
            for p, g in pairs:
                mapping[p] = g
        score = prob.score(mapping)
        if score > best:
            best, best_map = score, mapping
    return prob.result(best_map, best)


def _score_pair(args):
    pred, gold, restarts, seed = args
    return s_score(pred, gold, restarts, seed)


def corpus_s_score(preds, golds, restarts: int = 5, seed: int = 0, workers: int = 1):
    """Micro-averaged corpus S-score; returns ``(P, R, F1, per-pair results)``."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold graphs")
    jobs = [(p, g, restarts, [seed, i]) for i, (p, g) in enumerate(zip(preds, golds))]
    results = parallel_map(_score_pair, jobs, workers)
    agg = MatchResult({}, sum(r.matched for r in results), sum(r.predicted for r in results),
                      sum(r.gold for r in results))
    return agg.precision, agg.recall, agg.f1, results


# -- syntax ----------------------------------------------------------------------

def syntax_metrics(pred, gold) -> dict[str, float]:
    """Micro UAS / LAS / POS accuracy (percent).

    Both arguments are sequences of ``(heads, labels, pos)`` per sentence.
    """
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted sentences for {len(gold)} gold")
    n = uas = las = pos = 0
    for k, ((ph, pl, pp), (gh, gl, gp)) in enumerate(zip(pred, gold)):
        if not (len(ph) == len(gh) == len(pl) == len(gl) == len(pp) == len(gp)):
            raise ValueError(f"sentence {k}: length mismatch")
        for a, b, c, d, e, f in zip(ph, gh, pl, gl, pp, gp):
            n += 1
            uas += a == b
            las += a == b and c == d
            pos += e == f
    if n == 0:
        return {"uas": 0.0, "las": 0.0, "pos": 0.0}
    return {"uas": 100.0 * uas / n, "las": 100.0 * las / n, "pos": 100.0 * pos / n}


# -- attributes ------------------------------------------------------------------

def binary_f1(pred_positive: np.ndarray, gold_positive: np.ndarray) -> float:
    tp = int(np.sum(pred_positive & gold_positive))
    fp = int(np.sum(pred_positive & ~gold_positive))
    fn = int(np.sum(~pred_positive & gold_positive))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 100.0 * 2 * tp / denom


def threshold_candidates(pred: np.ndarray) -> np.ndarray:
    u = np.unique(pred)
    return np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])


def tune_threshold(pred, gold) -> tuple[float, float]:
    """Best ``(theta, F1)`` with ``pred > theta`` as positive and gold binarized at 0."""
    pred, gold_pos = np.asarray(pred, dtype=float), np.asarray(gold, dtype=float) > 0
    best_theta, best_f1 = 0.0, -1.0
    for theta in threshold_candidates(pred):
        f1 = binary_f1(pred > theta, gold_pos)
        if f1 > best_f1:
            best_theta, best_f1 = float(theta), f1
    return best_theta, best_f1


def pearson(pred, gold) -> float | None:
    pred, gold = np.asarray(pred, dtype=float), np.asarray(gold, dtype=float)
    if pred.std() == 0 or gold.std() == 0:
        return None
    return float(np.corrcoef(pred, gold)[0, 1])


@dataclass
class AttributeReport:
    rho: float | None
    f1: float | None
    table: dict[str, dict] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def attribute_metrics(test: dict[str, tuple], validation: dict[str, tuple] | None = None) -> AttributeReport:
    """Per-attribute Pearson correlation and tuned-threshold F1, macro-averaged.

    Each mapping goes from attribute name to ``(pred, gold)`` arrays holding
    only annotated (mask = 1) entries.  The threshold for each attribute is
    tuned on ``validation`` (on ``test`` itself when none is given).
    """
    validation = validation or test
    table, skipped, rhos, f1s = {}, [], [], []
    for name in sorted(test):
        pred, gold = (np.asarray(a, dtype=float) for a in test[name])
        if pred.size < 2:
            skipped.append(name)
            continue
        v_pred, v_gold = validation.get(name, (pred, gold))
        theta, val_f1 = tune_threshold(v_pred, v_gold) if len(v_pred) else (0.0, 0.0)
        rho = pearson(pred, gold)
        # with no positive gold entries F1 is undefined; flag it like a zero-variance rho
        f1 = binary_f1(pred > theta, gold > 0) if np.any(gold > 0) else None
        table[name] = {"n": int(pred.size), "rho": rho, "f1": f1, "threshold": theta,
                       "validation_f1": val_f1, "zero_variance": rho is None, "no_positives": f1 is None}
        if rho is not None:
            rhos.append(rho)
        if f1 is not None:
            f1s.append(f1)
    return AttributeReport(float(np.mean(rhos)) if rhos else None,
                           float(np.mean(f1s)) if f1s else None, table, skipped)


def collect_attribute_entries(model, records) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Oracle-mode ``(pred, gold)`` entries for every annotated attribute."""
    pred, gold = {}, {}
    for record in records:
        out, ids = model.oracle_attributes(record)
        attrs = record[2]
        for names, values, keys, entry in (
                (attrs.node_attrs, out.node_values, ids[1:], attrs.node_entry),
                (attrs.edge_attrs, out.edge_values, [(ids[i], ids[j]) for i, j in out.edge_pairs],
                 attrs.edge_entry)):
            if values is None:
                continue
            for r, key in enumerate(keys):
                for c, name in enumerate(names):
                    v, m = entry(key, name)
                    if m:
                        pred.setdefault(name, []).append(values.data[r, c])
                        gold.setdefault(name, []).append(v)
    return {k: (np.array(pred[k]), np.array(gold[k])) for k in pred}


# -- whole-model evaluation --------------------------------------------------------

def _parse_job(args):
    model, sent, decode = args
    return model.parse(sent, decode)


def evaluate_model(model, records, restarts: int = 5, seed: int = 0, workers: int = 1,
                   validation_records=None, decode: str = "greedy", attributes: bool = True) -> dict:
    """Parse ``records`` and report S-score, syntax and oracle attribute metrics."""
    records = list(records)
    outputs = parallel_map(_parse_job, [(model, r[0], decode) for r in records], workers)
    preds = [(r[0], o.graph) for r, o in zip(records, outputs)]
    golds = [(r[0], r[1]) for r in records]
    p, r_, f1, _ = corpus_s_score(preds, golds, restarts, seed, workers)
    report = {"n_sentences": len(records), "s_precision": p, "s_recall": r_, "s_f1": f1,
              "n_degenerate": sum(o.degenerate for o in outputs),
              "n_invalid": sum(not o.valid for o in outputs)}
    if outputs and outputs[0].tree is not None:
        report.update(syntax_metrics(
            [(o.tree.heads, [model.vocabs.deprels[i] for i in o.tree.labels], o.pos) for o in outputs],
            [(list(r[0].heads), list(r[0].deprels), r[0].pos) for r in records]))
    if attributes and (model.vocabs.node_attrs or model.vocabs.edge_attrs):
        test = collect_attribute_entries(model, records)
        val = collect_attribute_entries(model, validation_records) if validation_records else None
        attr = attribute_metrics(test, val)
        report.update({"attr_rho": attr.rho, "attr_f1": attr.f1, "attributes": attr.table,
                       "attributes_skipped": attr.skipped})
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def graph_pairs(records) -> list[tuple[AnnotatedSentence, SemanticGraph]]:
    return [(r[0], r[1]) for r in records]
