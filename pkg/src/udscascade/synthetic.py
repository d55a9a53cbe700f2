"""A small generative English grammar with UD trees, for tests and desk-scale runs.

Sentences are built as dependency trees and linearized in order, so every
output is a valid projective tree with UPOS tags.  Relation graphs come from
:func:`extract_relations`; attribute values are tied to lexical items so
that they can be learned.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .augmentation import ARG_LABEL, RuleConfig, extract_relations
from .graph import AnnotatedSentence, AttributeSet, NodeKind, Record

NODE_ATTRS = ("factual", "dynamic", "kind", "abstract")
EDGE_ATTRS = ("volition", "awareness", "change_of_state", "existed_after")
PREDICATE_ATTRS = ("factual", "dynamic")
ARGUMENT_ATTRS = ("kind", "abstract")

NOUNS = ("dog", "cat", "man", "woman", "child", "teacher", "doctor", "car", "book", "house",
         "idea", "letter", "city", "river", "team", "song", "plan", "garden", "student", "bird")
PROPNS = ("John", "Mary", "Paris", "Alice", "Bob", "London")
PRONS = ("he", "she", "they", "we", "it", "I")
DETS = ("the", "a", "this", "every", "some")
ADJS = ("big", "small", "old", "red", "happy", "new", "quiet")
TRANSITIVE = ("chased", "saw", "liked", "bought", "read", "wrote", "found", "built", "visited", "helped")
INTRANSITIVE = ("slept", "ran", "arrived", "laughed", "fell", "waited")
SAY_VERBS = ("said", "thought", "believed", "knew")
WANT_VERBS = ("wanted", "tried", "hoped", "planned")
BASE_VERBS = ("chase", "see", "buy", "read", "write", "find", "visit", "help", "leave", "sleep")
AUXES = ("will", "can", "may", "must", "did")
ADPS = ("in", "on", "with", "near", "from")
ADVS = ("quickly", "often", "never", "today", "again")
PUNCTS = (".", "!")


@dataclass
class _Node:
    form: str
    pos: str
    rel: str = "root"
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)


def _linearize(root: _Node) -> AnnotatedSentence:
    order: list[tuple[_Node, _Node | None]] = []

    def walk(node: _Node, parent: _Node | None):
        for dep in node.left:
            walk(dep, node)
        order.append((node, parent))
        for dep in node.right:
            walk(dep, node)

    walk(root, None)
    position = {id(n): i + 1 for i, (n, _) in enumerate(order)}
    heads = [position[id(n)] if p is None else position[id(p)] for n, p in order]
    return AnnotatedSentence.build([n.form for n, _ in order], [n.pos for n, _ in order], heads,
                                   [n.rel for n, _ in order])


class Grammar:
    def __init__(self, rng: np.random.Generator, max_depth: int = 2):
        self.rng = rng
        self.max_depth = max_depth

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def chance(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def noun_phrase(self, rel: str, allow_pp: bool = True) -> _Node:
        r = self.rng.random()
        if r < 0.2:
            return _Node(self.pick(PRONS), "PRON", rel)
        if r < 0.35:
            return _Node(self.pick(PROPNS), "PROPN", rel)
        head = _Node(self.pick(NOUNS), "NOUN", rel)
        head.left.append(_Node(self.pick(DETS), "DET", "det"))
        if self.chance(0.3):
            head.left.append(_Node(self.pick(ADJS), "ADJ", "amod"))
        if allow_pp and self.chance(0.15):
            head.right.append(self.prep_phrase("nmod"))
        return head

    def prep_phrase(self, rel: str) -> _Node:
        np_ = self.noun_phrase(rel, allow_pp=False)
        np_.left.insert(0, _Node(self.pick(ADPS), "ADP", "case"))
        return np_

    def clause(self, rel: str, depth: int, subject: bool = True) -> _Node:
        r = self.rng.random()
        nested = depth < self.max_depth
        if nested and r < 0.15:
            kind = "say"
        elif nested and r < 0.27:
            kind = "want"
        elif r < 0.75:
            kind = "trans"
        else:
            kind = "intrans"
        form = self.pick({"say": SAY_VERBS, "want": WANT_VERBS, "trans": TRANSITIVE,
                          "intrans": INTRANSITIVE}[kind])
        verb = _Node(form, "VERB", rel)
        if subject:
            verb.left.append(self.noun_phrase("nsubj"))
        if self.chance(0.15):
            verb.left.append(_Node(self.pick(ADVS), "ADV", "advmod"))
        if kind == "trans":
            verb.right.append(self.noun_phrase("obj"))
        if self.chance(0.25):
            verb.right.append(self.prep_phrase("obl"))
        if kind == "say":
            sub = self.clause("ccomp", depth + 1)
            sub.left.insert(0, _Node("that", "SCONJ", "mark"))
            verb.right.append(sub)
        elif kind == "want":
            verb.right.append(self.infinitive(depth + 1))
        if nested and self.chance(0.1):
            sub = self.clause("advcl", depth + 1)
            sub.left.insert(0, _Node("because", "SCONJ", "mark"))
            verb.right.append(sub)
        if nested and self.chance(0.1):
            sub = self.clause("conj", depth + 1, subject=self.chance(0.5))
            sub.left.insert(0, _Node(self.pick(("and", "but")), "CCONJ", "cc"))
            verb.right.append(sub)
        if self.chance(0.1):
            verb.right.append(_Node(self.pick(ADVS), "ADV", "advmod"))
        return verb

    def infinitive(self, depth: int) -> _Node:
        verb = _Node(self.pick(BASE_VERBS), "VERB", "xcomp")
        verb.left.append(_Node("to", "PART", "mark"))
        if self.chance(0.6):
            verb.right.append(self.noun_phrase("obj"))
        return verb

    def sentence(self, fragment_rate: float = 0.0) -> AnnotatedSentence:
        if self.chance(fragment_rate):
            root = self.noun_phrase("root")
            root.rel = "root"
        else:
            root = self.clause("root", 0)
            if self.chance(0.15):
                root.left.insert(1 if root.left else 0, _Node(self.pick(AUXES), "AUX", "aux"))
        root.right.append(_Node(self.pick(PUNCTS), "PUNCT", "punct"))
        return _linearize(root)


def generate_sentences(n: int, seed: int = 0, fragment_rate: float = 0.0, max_depth: int = 2,
                       max_len: int = 40) -> list[AnnotatedSentence]:
    grammar = Grammar(np.random.default_rng(seed), max_depth)
    out = []
    while len(out) < n:
        s = grammar.sentence(fragment_rate)
        if len(s) <= max_len:
            out.append(s)
    return out


def _lexical_value(word: str, attr: str) -> float:
    """Fixed per-(word, attribute) base value in [-2.5, 2.5]."""
    h = zlib.crc32(f"{word}|{attr}".encode())
    return (h % 10001) / 10000.0 * 5.0 - 2.5


def annotate(sent: AnnotatedSentence, rng: np.random.Generator, rules: RuleConfig = RuleConfig(),
             mask_rate: float = 0.8, noise: float = 0.3) -> Record:
    """Attach a relation graph and lexically driven, randomly masked attributes."""
    graph = extract_relations(sent, rules)
    forms = sent.forms
    node_values, node_mask, edge_values, edge_mask = {}, {}, {}, {}

    def value(word, attr):
        return float(np.clip(_lexical_value(word.lower(), attr) + rng.normal(0.0, noise), -3.0, 3.0))

    for node in graph.semantic_nodes:
        names = PREDICATE_ATTRS if node.kind is NodeKind.PREDICATE else ARGUMENT_ATTRS
        word = forms[node.center - 1]
        node_values[node.id] = {a: value(word, a) for a in names}
        node_mask[node.id] = {a: int(rng.random() < mask_rate) for a in names}
    for e in graph.edges:
        if e.label != ARG_LABEL:
            continue
        dst = graph.node(e.dst)
        rel = sent.deprels[dst.center - 1]
        word = f"{forms[dst.center - 1]}/{rel}"
        edge_values[(e.src, e.dst)] = {a: value(word, a) for a in EDGE_ATTRS}
        edge_mask[(e.src, e.dst)] = {a: int(rng.random() < mask_rate) for a in EDGE_ATTRS}
    attrs = AttributeSet(NODE_ATTRS, EDGE_ATTRS, node_values, node_mask, edge_values, edge_mask)
    return sent, graph, attrs


def synthetic_records(n: int, seed: int = 0, rules: RuleConfig = RuleConfig(), **kwargs) -> list[Record]:
    """``n`` annotated records; sentences without predicates are never produced."""
    sentences = generate_sentences(n, seed, **kwargs)
    rng = np.random.default_rng([seed, 1])
    return [annotate(s, rng, rules) for s in sentences]
