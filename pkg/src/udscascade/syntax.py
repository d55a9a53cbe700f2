"""POS tagging and biaffine dependency parsing over encoder states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, Linear, Module, Parameter, Tensor
from .autodiff import functional as F
from .autodiff.nn import glorot
from .graph import tree_problems
from .mst import max_spanning_tree


@dataclass
class SyntaxHeads:
    """Scores produced by :meth:`SyntaxParser.score`.

    ``arc[i, j]`` scores word ``j`` (0-based) as the head of word ``i``; the
    diagonal scores word ``i`` as the sentence root.  The four ReLU
    projections are kept so that downstream layers can reuse them.
    """

    arc: Tensor
    pos: Tensor
    arc_dep: Tensor
    arc_head: Tensor
    lab_dep: Tensor
    lab_head: Tensor
    parser: "SyntaxParser" = field(repr=False)

    def label_logits(self, heads) -> Tensor:
        """``K x |labels|`` label logits given 1-based head indices."""
        rows = np.asarray(heads, dtype=np.int64) - 1
        return self.parser.label_scorer(self.lab_dep, F.take_rows(self.lab_head, rows))

    def label_scores(self) -> np.ndarray:
        """Full ``K x K x |labels|`` label-score array (no gradient)."""
        w, b = self.parser.w_label.data, self.parser.b_label.data
        a, _, c = w.shape
        LW = (self.lab_dep.data @ w.reshape(a, -1)).reshape(len(self.lab_dep.data), a, c)
        return np.matmul(self.lab_head.data[None], LW) + b

    def predicted_heads(self) -> list[int]:
        return [int(j) + 1 for j in self.arc.data.argmax(axis=1)]


@dataclass
class DecodedTree:
    heads: list[int]
    labels: list[int]
    problems: list[str]

    @property
    def valid(self) -> bool:
        return not self.problems


class SyntaxParser(Module):
    def __init__(self, dim: int, n_pos: int, n_labels: int, rng: np.random.Generator,
                 mlp_dim: int = 128, arc_dim: int = 64, label_dim: int = 64, dropout: float = 0.3):
        self.pos_mlp = MLP(dim, mlp_dim, n_pos, rng, dropout)
        self.arc_left = Linear(dim, arc_dim, rng)
        self.arc_right = Linear(dim, arc_dim, rng)
        self.w_arc = Parameter(glorot(rng, (arc_dim + 1, arc_dim + 1)) * 0.1)
        self.lab_left = Linear(dim, label_dim, rng)
        self.lab_right = Linear(dim, label_dim, rng)
        self.w_label = Parameter(glorot(rng, (label_dim, label_dim, n_labels),
                                        fan_in=label_dim, fan_out=n_labels) * 0.1)
        self.b_label = Parameter(np.zeros(n_labels))
        self.dropout = dropout

    def label_scorer(self, dep: Tensor, head: Tensor) -> Tensor:
        return F.bilinear(dep, head, self.w_label) + self.b_label

    def predict_pos(self, H: Tensor, rng=None) -> Tensor:
        return self.pos_mlp(H, rng)

    def score(self, H: Tensor, rng=None) -> SyntaxHeads:
        def proj(layer):
            return F.dropout(F.relu(layer(H)), self.dropout, rng)

        arc_dep, arc_head = proj(self.arc_left), proj(self.arc_right)
        lab_dep, lab_head = proj(self.lab_left), proj(self.lab_right)
        arc = F.biaffine(arc_dep, arc_head, self.w_arc)
        return SyntaxHeads(arc, self.predict_pos(H, rng), arc_dep, arc_head, lab_dep, lab_head, self)

    # -- losses ---------------------------------------------------------------
    @staticmethod
    def pos_loss(heads: SyntaxHeads, gold_pos) -> Tensor:
        return F.cross_entropy(heads.pos, gold_pos)

    @staticmethod
    def tree_loss(heads: SyntaxHeads, gold_heads, gold_labels, teacher_forcing: bool = True) -> Tensor:
        """Head cross-entropy plus label cross-entropy.

        With teacher forcing the label term conditions on gold heads,
        otherwise on the argmax-predicted heads.
        """
        arc_loss = F.cross_entropy(heads.arc, np.asarray(gold_heads) - 1)
        chosen = gold_heads if teacher_forcing else heads.predicted_heads()
        return arc_loss + F.cross_entropy(heads.label_logits(chosen), gold_labels)


def decode_tree(arc_scores: np.ndarray, label_scores: np.ndarray, mode: str = "greedy") -> DecodedTree:
    """Turn score arrays into heads (1-based, root = self) and label ids.

    ``greedy`` takes per-row argmaxes and reports (never repairs) invalid
    trees.  ``mst`` returns the highest-scoring valid tree under row-wise
    log-softmax normalisation.
    """
    arc_scores = np.asarray(arc_scores, dtype=np.float64)
    if not np.all(np.isfinite(arc_scores)):
        raise ValueError("decode_tree: arc scores must be finite")
    if mode == "greedy":
        heads = [int(j) + 1 for j in arc_scores.argmax(axis=1)]
    elif mode == "mst":
        z = arc_scores - arc_scores.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        heads = max_spanning_tree(logp)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    labels = [int(np.argmax(label_scores[i, h - 1])) for i, h in enumerate(heads)]
    return DecodedTree(heads, labels, tree_problems(heads))
