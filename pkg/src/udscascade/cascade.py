"""Semantic cascade: word classes -> nodes -> spans -> edges -> attributes.

Every stage works on a whole sentence at once.  Node order is fixed: by
center token, and for a token carrying both kinds the Predicate comes
first.  Index 0 of the edge-score tensor is the virtual root.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, Linear, Module, Parameter, Tensor
from .autodiff import functional as F
from .autodiff.nn import glorot
from .graph import (ROOT_ID, WORD_LABELS, AnnotatedSentence, AttributeSet, NodeKind,
                    SemanticGraph, SemEdge, SemNode, WordLabel, derive_word_labels)
from .injection import SpanRefiner

KIND_INDEX = {NodeKind.PREDICATE: 0, NodeKind.ARGUMENT: 1}
KINDS = (NodeKind.PREDICATE, NodeKind.ARGUMENT)
LABEL_INDEX = {lab: i for i, lab in enumerate(WORD_LABELS)}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def node_id(kind: NodeKind, center: int) -> str:
    return f"{'p' if kind is NodeKind.PREDICATE else 'a'}{center}"


def roster_from_labels(labels) -> tuple[list[tuple[int, NodeKind]], list[int]]:
    """Semantic nodes ``(token0, kind)`` and syntactic token rows for a label sequence."""
    semantic, syntactic = [], []
    for i, lab in enumerate(labels):
        lab = WordLabel(lab) if not isinstance(lab, WordLabel) else lab
        if lab in (WordLabel.PRE, WordLabel.PREARG):
            semantic.append((i, NodeKind.PREDICATE))
        if lab in (WordLabel.ARG, WordLabel.PREARG):
            semantic.append((i, NodeKind.ARGUMENT))
        if lab is WordLabel.SYN:
            syntactic.append(i)
    return semantic, syntactic


@dataclass
class NodeEmbeddings:
    """Embeddings plus the roster they were generated for."""

    semantic: list[tuple[int, NodeKind]]
    syntactic: list[int]
    g_n: Tensor | None
    g_m: Tensor | None
    g_s: Tensor | None
    root: Tensor

    @property
    def n_semantic(self) -> int:
        return len(self.semantic)

    @property
    def degenerate(self) -> bool:
        return not self.semantic


@dataclass
class CascadeTargets:
    """Gold supervision for every stage, aligned with the generated roster."""

    word_labels: np.ndarray
    semantic: list[tuple[int, NodeKind]]
    syntactic: list[int]
    owners: np.ndarray
    gold_ids: list[str]
    edge_targets: np.ndarray
    edge_pairs: list[tuple[int, int]]
    node_values: np.ndarray
    node_mask: np.ndarray
    edge_values: np.ndarray
    edge_mask: np.ndarray


def build_targets(sent: AnnotatedSentence, graph: SemanticGraph, attrs: AttributeSet,
                  edge_classes: dict[str, int], node_attrs, edge_attrs) -> CascadeTargets:
    labels = derive_word_labels(sent, graph)
    semantic, syntactic = roster_from_labels(labels)
    by_key = {(n.center - 1, n.kind): n for n in graph.semantic_nodes}
    gold_nodes = [by_key[key] for key in semantic]
    position = {n.id: i + 1 for i, n in enumerate(gold_nodes)}
    position[ROOT_ID] = 0
    owners = np.zeros(len(syntactic), dtype=np.int64)
    for k, tok in enumerate(syntactic):
        owners[k] = next(i for i, n in enumerate(gold_nodes) if tok + 1 in n.span)
    m = len(semantic)
    edge_targets = np.zeros((m + 1, m + 1), dtype=np.int64)
    edge_pairs = []
    for e in graph.edges:
        i, j = position[e.src], position[e.dst]
        edge_targets[i, j] = edge_classes.get(e.label, 0)
        if e.src != ROOT_ID:
            edge_pairs.append((i, j))
    edge_pairs.sort()
    node_values = np.zeros((m, len(node_attrs)))
    node_mask = np.zeros((m, len(node_attrs)))
    for r, n in enumerate(gold_nodes):
        for c, name in enumerate(node_attrs):
            node_values[r, c], node_mask[r, c] = attrs.node_entry(n.id, name)
    ids = [ROOT_ID] + [n.id for n in gold_nodes]
    edge_values = np.zeros((len(edge_pairs), len(edge_attrs)))
    edge_mask = np.zeros((len(edge_pairs), len(edge_attrs)))
    for r, (i, j) in enumerate(edge_pairs):
        for c, name in enumerate(edge_attrs):
            edge_values[r, c], edge_mask[r, c] = attrs.edge_entry((ids[i], ids[j]), name)
    return CascadeTargets(np.array([LABEL_INDEX[lab] for lab in labels], dtype=np.int64),
                          semantic, syntactic, owners, [n.id for n in gold_nodes], edge_targets,
                          edge_pairs, node_values, node_mask, edge_values, edge_mask)


@dataclass
class AttributeOutputs:
    node_values: Tensor | None = None
    node_mask_logits: Tensor | None = None
    edge_values: Tensor | None = None
    edge_mask_logits: Tensor | None = None
    edge_pairs: list[tuple[int, int]] = field(default_factory=list)


class CascadeHeads(Module):
    """Trainable parameters for the five semantic stages."""

    def __init__(self, dim: int, n_edge_classes: int, node_attrs, edge_attrs, rng,
                 mlp_dim: int = 128, pair_dim: int = 64, type_dim: int | None = None,
                 attr_dim: int = 32, attr_channels: int = 16, dropout: float = 0.3,
                 span_refine: bool = False):
        type_dim = type_dim or max(8, dim // 4)
        self.node_attrs, self.edge_attrs = tuple(node_attrs), tuple(edge_attrs)
        self.n_edge_classes = n_edge_classes
        self.dropout = dropout
        self.classifier = MLP(dim, mlp_dim, len(WORD_LABELS), rng, dropout)
        self.type_embedding = Parameter(rng.normal(0.0, 1.0 / np.sqrt(type_dim), (2, type_dim)))
        self.node_proj = Linear(dim + type_dim, dim, rng)
        self.root = Parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), (1, dim)))
        self.span_left = Linear(dim, pair_dim, rng)
        self.span_right = Linear(dim, pair_dim, rng)
        self.w_span = Parameter(glorot(rng, (pair_dim + 1, pair_dim + 1)) * 0.1)
        self.edge_left = Linear(dim, pair_dim, rng)
        self.edge_right = Linear(dim, pair_dim, rng)
        self.w_edge = Parameter(glorot(rng, (n_edge_classes, pair_dim + 1, pair_dim + 1),
                                       fan_in=pair_dim, fan_out=pair_dim) * 0.1)
        self.node_attr_mlp = MLP(dim, mlp_dim, 2 * len(self.node_attrs), rng, dropout)
        self.attr_left = Linear(dim, attr_dim, rng)
        self.attr_right = Linear(dim, attr_dim, rng)
        self.w_attr = Parameter(glorot(rng, (attr_dim, attr_dim, attr_channels),
                                       fan_in=attr_dim, fan_out=attr_channels) * 0.1)
        self.edge_attr_mlp = MLP(attr_channels + 2 * attr_dim, mlp_dim, 2 * len(self.edge_attrs), rng, dropout)
        self.span_refiner = SpanRefiner(dim, rng) if span_refine else None
        self.stage_calls: Counter = Counter()

    def _proj(self, layer, x, rng):
        return F.dropout(F.relu(layer(x)), self.dropout, rng)

    # -- stages ------------------------------------------------------------------
    def classify_words(self, H: Tensor, rng=None) -> Tensor:
        self.stage_calls["classify"] += 1
        return self.classifier(H, rng)

    def generate_nodes(self, labels, H: Tensor) -> NodeEmbeddings:
        self.stage_calls["generate"] += 1
        semantic, syntactic = roster_from_labels(labels)
        g_n = F.take_rows(H, syntactic) if syntactic else None
        g_m = None
        if semantic:
            rows = [tok for tok, _ in semantic]
            kinds = [KIND_INDEX[kind] for _, kind in semantic]
            g_m = self.node_proj(F.concat([F.take_rows(H, rows), F.take_rows(self.type_embedding, kinds)], axis=1))
        return NodeEmbeddings(semantic, syntactic, g_n, g_m, g_m, self.root)

    def assign_spans(self, nodes: NodeEmbeddings, rng=None) -> Tensor:
        """``N x M`` ownership logits; raises when syntactic nodes have no possible owner."""
        self.stage_calls["span"] += 1
        if nodes.syntactic and nodes.degenerate:
            raise ValueError(f"{len(nodes.syntactic)} syntactic node(s) but no semantic node to own them")
        if not nodes.syntactic:
            return Tensor(np.zeros((0, nodes.n_semantic)))
        return F.biaffine(self._proj(self.span_left, nodes.g_n, rng),
                          self._proj(self.span_right, nodes.g_m, rng), self.w_span)

    def refine_spans(self, nodes: NodeEmbeddings, owners) -> NodeEmbeddings:
        if self.span_refiner is None or nodes.degenerate:
            return nodes
        self.stage_calls["span_refine"] += 1
        nodes.g_s = self.span_refiner(nodes.g_m, nodes.g_n, owners)
        return nodes

    def node_states(self, nodes: NodeEmbeddings) -> Tensor:
        """Root row followed by the span-level embeddings."""
        if nodes.degenerate:
            return nodes.root
        return F.concat([nodes.root, nodes.g_s], axis=0)

    def score_semantic_edges(self, nodes: NodeEmbeddings, rng=None) -> Tensor:
        """``(M+1) x (M+1) x classes`` logits, class 0 meaning no edge."""
        self.stage_calls["edge"] += 1
        S = self.node_states(nodes)
        return F.biaffine(self._proj(self.edge_left, S, rng), self._proj(self.edge_right, S, rng), self.w_edge)

    def predict_attributes(self, nodes: NodeEmbeddings, edge_pairs, rng=None) -> AttributeOutputs:
        """Values and mask logits for every semantic node and the given non-root edges.

        ``edge_pairs`` index the edge-score tensor (root = 0) and must be
        existing edges.
        """
        self.stage_calls["attributes"] += 1
        out = AttributeOutputs(edge_pairs=list(edge_pairs))
        if nodes.degenerate:
            return out
        a = len(self.node_attrs)
        both = self.node_attr_mlp(nodes.g_s, rng)
        out.node_values, out.node_mask_logits = both[:, :a], both[:, a:]
        if edge_pairs:
            if any(i == 0 or j == 0 or i == j for i, j in edge_pairs):
                raise ValueError("edge attributes need distinct non-root endpoints")
            src = [i - 1 for i, _ in edge_pairs]
            dst = [j - 1 for _, j in edge_pairs]
            v_i = F.take_rows(self._proj(self.attr_left, nodes.g_s, rng), src)
            v_j = F.take_rows(self._proj(self.attr_right, nodes.g_s, rng), dst)
            b = len(self.edge_attrs)
            both = self.edge_attr_mlp(F.concat([F.bilinear(v_i, v_j, self.w_attr), v_i, v_j], axis=1), rng)
            out.edge_values, out.edge_mask_logits = both[:, :b], both[:, b:]
        return out


# -- decoding -------------------------------------------------------------------

def decode_spans(span_logits: np.ndarray) -> np.ndarray:
    if span_logits.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return span_logits.argmax(axis=1)


def decode_edges(edge_logits: np.ndarray) -> list[tuple[int, int, int]]:
    """``(src, dst, class)`` for every ordered pair whose best class is an edge."""
    best = edge_logits.argmax(axis=2)
    np.fill_diagonal(best, 0)
    best[:, 0] = 0
    src, dst = np.nonzero(best)
    return [(int(i), int(j), int(best[i, j])) for i, j in zip(src, dst)]


def assemble_graph(semantic, syntactic, owners, edges, edge_labels) -> tuple[SemanticGraph, list[str]]:
    """Build the output graph; ``edge_labels[c]`` names class ``c`` (index 0 unused)."""
    spans = {i: {tok + 1} for i, (tok, _) in enumerate(semantic)}
    for tok, owner in zip(syntactic, owners):
        spans[int(owner)].add(tok + 1)
    nodes = [SemNode(ROOT_ID, NodeKind.ROOT)]
    ids = [ROOT_ID]
    for i, (tok, kind) in enumerate(semantic):
        ids.append(node_id(kind, tok + 1))
        nodes.append(SemNode(ids[-1], kind, tok + 1, tuple(spans[i])))
    sem_edges = [SemEdge(ids[i], ids[j], edge_labels[c]) for i, j, c in edges]
    return SemanticGraph(tuple(nodes), tuple(sem_edges)), ids


def attributes_to_set(outputs: AttributeOutputs, ids, node_attrs, edge_attrs, clip: bool = True) -> AttributeSet:
    """Values (clipped to the annotation range) with masks from ``sigmoid(logit) > 0.5``."""
    def table(values, logits, keys, names):
        vals, masks = {}, {}
        if values is None:
            return vals, masks
        v = np.clip(values.data, -3.0, 3.0) if clip else values.data
        m = (logits.data > 0).astype(int)
        for r, key in enumerate(keys):
            vals[key] = {name: float(v[r, c]) for c, name in enumerate(names)}
            masks[key] = {name: int(m[r, c]) for c, name in enumerate(names)}
        return vals, masks

    nv, nm = table(outputs.node_values, outputs.node_mask_logits, ids[1:], node_attrs)
    ev, em = table(outputs.edge_values, outputs.edge_mask_logits,
                   [(ids[i], ids[j]) for i, j in outputs.edge_pairs], edge_attrs)
    return AttributeSet(tuple(node_attrs), tuple(edge_attrs), nv, nm, ev, em)
