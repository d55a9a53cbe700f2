"""Feeding predicted syntax back into word representations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Linear, Module, Parameter, Tensor
from .autodiff import functional as F
from .syntax import SyntaxHeads

MODES = ("none", "multitask", "gcn", "attention")


@dataclass
class InjectionConfig:
    mode: str = "gcn"
    gcn_layers: int = 2
    span_refine: bool = False
    hard_adjacency: bool = False
    edge_type_dim: int | None = None  # defaults to dim // 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown syntax mode {self.mode!r}; expected one of {MODES}")
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")

    @property
    def uses_syntax_loss(self) -> bool:
        return self.mode != "none"

    def to_dict(self):
        return asdict(self)


def head_adjacency(heads: SyntaxHeads, hard: bool = False) -> Tensor:
    """Row-stochastic head distribution with the self (root) arc removed.

    Row ``i`` spreads over the candidate heads of word ``i``.  A row whose
    mass sits entirely on the diagonal (single-word sentences) stays zero.
    """
    k = heads.arc.shape[0]
    off_diag = 1.0 - np.eye(k)
    if hard:
        adj = np.zeros((k, k))
        adj[np.arange(k), heads.arc.data.argmax(axis=1)] = 1.0
        return Tensor(adj * off_diag)
    probs = F.softmax(heads.arc, axis=-1) * off_diag
    sums = F.sum(probs, axis=1, keepdims=True)
    guard = (sums.data == 0).astype(np.float64)
    return probs / (sums + guard)


def label_distribution(heads: SyntaxHeads) -> Tensor:
    """Edge-type distribution of each word under its argmax head."""
    return F.softmax(heads.label_logits(heads.predicted_heads()), axis=-1)


class GCNLayer(Module):
    def __init__(self, dim: int, edge_dim: int, rng):
        self.down = Linear(dim, dim, rng)
        self.up = Linear(dim, dim, rng)
        self.types = Linear(edge_dim, dim, rng)
        self.mix = Linear(3 * dim, dim, rng)

    def __call__(self, H: Tensor, A_h: Tensor, typed: Tensor) -> Tensor:
        V = F.concat([self.down(F.matmul(A_h, H)),
                      self.up(F.matmul(F.transpose(A_h), H)),
                      self.types(typed)], axis=1)
        return F.relu(self.mix(F.relu(V)))


class GCNRefiner(Module):
    """Bidirectional GCN over the soft dependency adjacency plus edge types."""

    def __init__(self, dim: int, n_labels: int, rng, layers: int = 2, edge_dim: int | None = None):
        edge_dim = edge_dim or max(1, dim // 4)
        self.type_embedding = Parameter(rng.normal(0.0, 1.0 / np.sqrt(edge_dim), (n_labels, edge_dim)))
        self.layers = [GCNLayer(dim, edge_dim, rng) for _ in range(layers)]
        self.out = Linear(2 * dim, dim, rng)

    def __call__(self, H0: Tensor, A_h: Tensor, A_t: Tensor) -> Tensor:
        if A_h.shape != (H0.shape[0], H0.shape[0]) or A_t.shape[1] != self.type_embedding.shape[0]:
            raise F.ShapeError("gcn_refine", f"adjacency {A_h.shape} / types {A_t.shape} do not fit {H0.shape}")
        typed = F.matmul(A_t, self.type_embedding)
        H = H0
        for layer in self.layers:
            H = layer(H, A_h, typed)
        return self.out(F.concat([H0, H], axis=1))


class AttentionRefiner(Module):
    """Aggregate the parser's own arc/label projections along the head distribution."""

    def __init__(self, dim: int, arc_dim: int, label_dim: int, rng):
        self.out = Linear(dim + 2 * arc_dim + 2 * label_dim, dim, rng)

    def __call__(self, H: Tensor, heads: SyntaxHeads, A_h: Tensor) -> Tensor:
        V = F.concat([heads.arc_dep, heads.arc_head, heads.lab_dep, heads.lab_head], axis=1)
        return self.out(F.concat([H, F.matmul(A_h, V)], axis=1))


class SpanRefiner(Module):
    """Attention pooling of a node's span members, center included."""

    def __init__(self, dim: int, rng):
        self.query = Parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), dim))
        self.out = Linear(dim, dim, rng)

    def __call__(self, G_m: Tensor, G_n: Tensor | None, owners) -> Tensor:
        """``owners[k]`` is the semantic-node index that syntactic node ``k`` belongs to."""
        m = G_m.shape[0]
        members = G_m if G_n is None or G_n.shape[0] == 0 else F.concat([G_m, G_n], axis=0)
        total = members.shape[0]
        allowed = np.zeros((m, total), dtype=bool)
        allowed[np.arange(m), np.arange(m)] = True
        for k, owner in enumerate(owners):
            allowed[owner, m + k] = True
        scores = F.reshape(F.matmul(members, F.reshape(self.query, (-1, 1))), (1, total))
        bias = np.where(allowed, 0.0, -np.inf)
        weights = F.softmax(scores + Tensor(bias), axis=-1)
        return self.out(F.matmul(weights, members))


def injection_parameter_count(module: Module | None) -> int:
    return 0 if module is None else module.num_parameters()
