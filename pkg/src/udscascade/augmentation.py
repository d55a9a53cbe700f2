"""Pseudo-label generation from predicted syntax, filtering and data selection."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from .graph import (ROOT_ID, AnnotatedSentence, AttributeSet, NodeKind, Record, SemanticGraph, SemEdge,
                    SemNode, UDSError, validate_record)

log = logging.getLogger(__name__)

ARG_LABEL, HEAD_LABEL, ROOT_LABEL = "arg", "head", "root"


@dataclass(frozen=True)
class RuleConfig:
    predicate_pos: frozenset = frozenset({"VERB"})
    clausal: frozenset = frozenset({"ccomp", "xcomp", "csubj"})
    arguments: frozenset = frozenset({"nsubj", "obj", "iobj", "obl", "nmod"})
    stop: frozenset = frozenset({"punct", "cc", "conj", "advcl", "parataxis", "mark"})

    def __post_init__(self):
        for name in ("predicate_pos", "clausal", "arguments", "stop"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.clausal & self.arguments:
            raise ValueError("clausal and argument relations must be disjoint")
        if (self.clausal | self.arguments) & self.stop:
            raise ValueError("stop relations may not also introduce arguments")

    def to_dict(self):
        return {k: sorted(getattr(self, k)) for k in ("predicate_pos", "clausal", "arguments", "stop")}


def extract_relations(sent: AnnotatedSentence, rules: RuleConfig = RuleConfig()) -> SemanticGraph:
    """Rule-based predicate/argument graph over a dependency tree.

    Predicates sit on tokens with a predicate POS or attached by a clausal
    relation.  Dependents of a predicate via argument or clausal relations
    become Arguments; when such a dependent is itself a predicate the
    Argument is co-anchored on it and points at it with a ``head`` edge.
    Predicates that are not embedded this way hang off the root.
    """
    n = len(sent)
    heads, rels, pos = sent.heads, sent.deprels, sent.pos
    is_pred = [pos[i] in rules.predicate_pos or rels[i] in rules.clausal for i in range(n)]
    is_arg = [False] * n
    for i in range(n):
        h = heads[i] - 1
        if h != i and is_pred[h] and (rels[i] in rules.arguments or rels[i] in rules.clausal):
            is_arg[i] = True
    if not any(is_pred):
        return SemanticGraph.root_only()
    centers = {i for i in range(n) if is_pred[i] or is_arg[i]}
    children = sent.children()

    def span(c: int) -> tuple[int, ...]:
        out, todo = [c + 1], [c + 1]
        while todo:
            for d in children[todo.pop()]:
                if d - 1 in centers or rels[d - 1] in rules.stop:
                    continue
                out.append(d)
                todo.append(d)
        return tuple(sorted(out))

    nodes = [SemNode(ROOT_ID, NodeKind.ROOT)]
    edges = []
    for i in range(n):
        tok = i + 1
        if is_pred[i]:
            nodes.append(SemNode(f"p{tok}", NodeKind.PREDICATE, tok, span(i)))
        if is_arg[i]:
            nodes.append(SemNode(f"a{tok}", NodeKind.ARGUMENT, tok, (tok,) if is_pred[i] else span(i)))
            edges.append(SemEdge(f"p{heads[i]}", f"a{tok}", ARG_LABEL))
            if is_pred[i]:
                edges.append(SemEdge(f"a{tok}", f"p{tok}", HEAD_LABEL))
        if is_pred[i] and not is_arg[i]:
            edges.append(SemEdge(ROOT_ID, f"p{tok}", ROOT_LABEL))
    return SemanticGraph(tuple(nodes), tuple(edges))


# -- pseudo labels -------------------------------------------------------------------

def _pseudo_one(args):
    model, forms, rules, decode, index = args
    try:
        tree, pos = model.predict_syntax(forms, decode)
        if not tree.valid:
            raise UDSError("; ".join(tree.problems))
        deprels = [model.vocabs.deprels[i] for i in tree.labels]
        sent = AnnotatedSentence.build(forms, pos, tree.heads, deprels, sent_id=f"pseudo-{index}")
        graph = extract_relations(sent, rules)
        return sent, graph, AttributeSet()
    except Exception as exc:  # one bad sentence never aborts the corpus
        log.warning("pseudo_label: sentence %d skipped: %s", index, exc)
        return None


def pseudo_label(sentences, model, rules: RuleConfig = RuleConfig(), decode: str = "mst",
                 workers: int = 1) -> tuple[list[Record], int]:
    """Predict syntax for pre-tokenized sentences and derive relation graphs.

    Returns the records and the number of skipped sentences.
    """
    from .evaluation import parallel_map

    sentences = list(sentences)
    jobs = [(model, list(forms), rules, decode, i) for i, forms in enumerate(sentences) if len(forms)]
    results = parallel_map(_pseudo_one, jobs, workers)
    records = [r for r in results if r is not None]
    return records, len(sentences) - len(records)


@dataclass
class FilterReport:
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)

    def as_dict(self):
        return {"kept": self.kept, "dropped": dict(sorted(self.dropped.items()))}


def drop_reason(record: Record, max_len: int = 100) -> str | None:
    sent, graph, attrs = record
    if len(sent) > max_len:
        return "too_long"
    if graph.is_root_only:
        return "no_predicates"
    try:
        validate_record(sent, graph, attrs)
    except UDSError:
        return "invalid"
    return None


def filter_invalid(records, max_len: int = 100) -> tuple[list[Record], FilterReport]:
    kept, report = [], FilterReport()
    for record in records:
        reason = drop_reason(record, max_len)
        if reason is None:
            kept.append(record)
        else:
            report.dropped[reason] += 1
    report.kept = len(kept)
    return kept, report


# -- domain scoring -------------------------------------------------------------------

BOS, EOS, UNK_TOKEN = "<s>", "</s>", "<unk>"


class TrigramLM:
    """Word trigram model with add-k smoothing over a closed vocabulary plus ``<unk>``."""

    def __init__(self, corpus, k: float = 0.1):
        if k <= 0:
            raise ValueError("smoothing constant must be positive")
        self.k = k
        corpus = [list(s) for s in corpus]
        self.vocab = {w for s in corpus for w in s} | {EOS, UNK_TOKEN}
        self.trigrams: Counter = Counter()
        self.contexts: Counter = Counter()
        for s in corpus:
            seq = [BOS, BOS] + s + [EOS]
            for a, b, c in zip(seq, seq[1:], seq[2:]):
                self.trigrams[(a, b, c)] += 1
                self.contexts[(a, b)] += 1

    def logprob(self, a: str, b: str, c: str) -> float:
        num = self.trigrams.get((a, b, c), 0) + self.k
        return math.log(num / (self.contexts.get((a, b), 0) + self.k * len(self.vocab)))

    def _sentence_terms(self, tokens) -> list[float]:
        seq = [BOS, BOS] + [w if w in self.vocab else UNK_TOKEN for w in tokens] + [EOS]
        return [self.logprob(a, b, c) for a, b, c in zip(seq, seq[1:], seq[2:])]

    def cross_entropy(self, text) -> float:
        """Per-token cross-entropy (nats) of one sentence, or of a list of sentences pooled."""
        sentences = [text] if not text or isinstance(text[0], str) else text
        terms = [t for s in sentences for t in self._sentence_terms(s)]
        if not any(len(s) for s in sentences):
            raise ValueError("cannot score an empty sentence")
        return -sum(terms) / len(terms)


def domain_score(sentence, in_domain: TrigramLM, general: TrigramLM) -> float:
    """Cross-entropy difference; higher means closer to the in-domain corpus."""
    if not sentence:
        raise ValueError("cannot score an empty sentence")
    return general.cross_entropy(sentence) - in_domain.cross_entropy(sentence)


def select_top(sentences, in_domain: TrigramLM, general: TrigramLM, n: int) -> list:
    scored = sorted(((-domain_score(s, in_domain, general), i) for i, s in enumerate(sentences)))
    return [sentences[i] for _, i in scored[:n]]
