"""Trainable word encoders producing one context vector per token."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Linear, LayerNorm, Module, Parameter, Tensor
from .autodiff import functional as F
from .autodiff.nn import glorot

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    """Frequency-ordered token inventory; ties break alphabetically."""

    def __init__(self, itos: list[str], counts: dict[str, int] | None = None, specials=(PAD, UNK)):
        self.itos = list(itos)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.counts = dict(counts or {})
        self.specials = tuple(specials)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.stoi.get(UNK, -1))

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def save(self, path) -> None:
        lines = [f"{tok}\t{self.counts.get(tok, 0)}" for tok in self.itos]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        itos, counts = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, _, count = line.rpartition("\t")
            itos.append(tok)
            if tok not in (PAD, UNK):
                counts[tok] = int(count)
        return cls(itos, counts)

    def to_dict(self) -> dict:
        return {"itos": self.itos, "counts": self.counts}

    @classmethod
    def from_dict(cls, d) -> "Vocabulary":
        return cls(d["itos"], d.get("counts"))


def build_vocab(corpus, min_count: int = 2) -> Vocabulary:
    """``corpus`` is an iterable of token lists (or whitespace-separated strings)."""
    counts: Counter = Counter()
    n_sent = 0
    for sent in corpus:
        tokens = sent.split() if isinstance(sent, str) else sent
        counts.update(tokens)
        n_sent += 1
    if n_sent == 0 or not counts:
        raise ValueError("build_vocab: empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK] + kept, {t: counts[t] for t in kept})


@dataclass
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 100
    hidden_dim: int = 128
    layers: int = 1
    kind: str = "bilstm"
    max_len: int = 512
    heads: int = 4
    dropout: float = 0.3

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) <= 0:
            raise ValueError("encoder dimensions must be positive")
        if self.layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.kind not in ("bilstm", "transformer"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "bilstm" and self.hidden_dim % 2:
            raise ValueError("bilstm hidden_dim must be even")
        if self.kind == "transformer" and self.hidden_dim % self.heads:
            raise ValueError("transformer hidden_dim must divide by the head count")

    def to_dict(self):
        return asdict(self)


class LSTMDirection(Module):
    def __init__(self, n_in: int, hidden: int, rng):
        self.w_ih = Parameter(glorot(rng, (n_in, 4 * hidden)))
        self.w_hh = Parameter(glorot(rng, (hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Parameter(bias)
        self.hidden = hidden

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        return F.lstm(x, self.w_ih, self.w_hh, self.bias, reverse)

    def stepwise(self, x: Tensor, reverse: bool = False) -> Tensor:
        """Reference unrolled form built from single-step cells."""
        k = x.shape[0]
        h = Tensor(np.zeros((1, self.hidden)))
        c = Tensor(np.zeros((1, self.hidden)))
        outputs = [None] * k
        order = range(k - 1, -1, -1) if reverse else range(k)
        for t in order:
            h, c = F.lstm_step(x[t:t + 1], h, c, self.w_ih, self.w_hh, self.bias)
            outputs[t] = h
        return F.concat(outputs, axis=0)


class TransformerLayer(Module):
    """Post-norm self-attention block with a 4x feed-forward."""

    def __init__(self, dim: int, heads: int, rng, dropout: float):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng, bias=False)  # a key bias cannot move the softmax
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.ff1 = Linear(dim, 4 * dim, rng)
        self.ff2 = Linear(4 * dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.heads = heads
        self.dropout = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        dim = x.shape[1]
        hd = dim // self.heads
        q, k, v = self.q(x), self.k(x), self.v(x)
        outs = []
        for h in range(self.heads):
            cols = slice(h * hd, (h + 1) * hd)
            scores = F.matmul(q[:, cols], F.transpose(k[:, cols])) * (1.0 / np.sqrt(hd))
            outs.append(F.matmul(F.softmax(scores, axis=-1), v[:, cols]))
        att = self.o(F.concat(outs, axis=1))
        x = self.norm1(x + F.dropout(att, self.dropout, rng))
        ff = self.ff2(F.dropout(F.relu(self.ff1(x)), self.dropout, rng))
        return self.norm2(x + F.dropout(ff, self.dropout, rng))


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = 1.0 / (10000 ** (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return table


class Encoder(Module):
    """Embedding table -> BiLSTM or transformer -> linear projection to ``hidden_dim``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Parameter(rng.normal(0.0, 1.0 / np.sqrt(cfg.embed_dim), (cfg.vocab_size, cfg.embed_dim)))
        d = cfg.hidden_dim
        if cfg.kind == "bilstm":
            half = d // 2
            self.forward_layers = [LSTMDirection(cfg.embed_dim if i == 0 else d, half, rng) for i in range(cfg.layers)]
            self.backward_layers = [LSTMDirection(cfg.embed_dim if i == 0 else d, half, rng) for i in range(cfg.layers)]
        else:
            self.input_proj = Linear(cfg.embed_dim, d, rng)
            self.blocks = [TransformerLayer(d, cfg.heads, rng, cfg.dropout) for _ in range(cfg.layers)]
        self.projection = Linear(d, d, rng)

    def __call__(self, ids, rng: np.random.Generator | None = None, pad_id: int = 0) -> Tensor:
        """Encode one sentence of word ids.

        Trailing ``pad_id`` entries are treated as padding: they are not
        read by the network and their output rows are zero.
        """
        ids = np.asarray(ids, dtype=np.int64)
        total = len(ids)
        length = total
        while length > 0 and ids[length - 1] == pad_id:
            length -= 1
        if length > self.cfg.max_len:
            raise ValueError(f"sentence of length {length} exceeds max_len={self.cfg.max_len}")
        if length == 0:
            raise ValueError("cannot encode an empty sentence")
        x = F.embedding_lookup(self.embedding, ids[:length])
        x = F.dropout(x, self.cfg.dropout, rng)
        if self.cfg.kind == "bilstm":
            for fwd, bwd in zip(self.forward_layers, self.backward_layers):
                x = F.concat([fwd(x), bwd(x, reverse=True)], axis=1)
        else:
            x = self.input_proj(x) + Tensor(sinusoidal_positions(length, self.cfg.hidden_dim))
            for block in self.blocks:
                x = block(x, rng)
        out = F.dropout(self.projection(x), self.cfg.dropout, rng)
        if total > length:
            out = F.concat([out, Tensor(np.zeros((total - length, out.shape[1])))], axis=0)
        return out
