"""The full parser: encoder, syntax heads, injection and semantic cascade."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Module, Tensor, dump_checkpoint, load_checkpoint, no_grad, save_checkpoint
from .autodiff import functional as F
from .cascade import (AttributeOutputs, CascadeHeads, CascadeTargets, StageError, assemble_graph,
                      attributes_to_set, build_targets, decode_edges, decode_spans)
from .encoder import Encoder, EncoderConfig, Vocabulary, build_vocab
from .graph import (NO_EDGE, WORD_LABELS, AnnotatedSentence, AttributeSet, Record, SemanticGraph,
                    edge_label_vocabulary)
from .injection import (AttentionRefiner, GCNRefiner, InjectionConfig, head_adjacency,
                        label_distribution)
from .syntax import DecodedTree, SyntaxParser, decode_tree

TERMS = ("cls", "span", "edge", "attr_mask", "attr_value", "pos", "tree")
SYNTAX_TERMS = ("pos", "tree")


@dataclass
class ModelConfig:
    embed_dim: int = 100
    hidden_dim: int = 128
    encoder: str = "bilstm"
    encoder_layers: int = 1
    heads: int = 4
    mlp_dim: int = 128
    arc_dim: int = 64
    label_dim: int = 64
    pair_dim: int = 64
    attr_dim: int = 32
    attr_channels: int = 16
    dropout: float = 0.3
    syntax_mode: str = "gcn"
    gcn_layers: int = 2
    span_refine: bool = False
    hard_adjacency: bool = False

    def __post_init__(self):
        self.injection  # validates mode and layer count

    @property
    def injection(self) -> InjectionConfig:
        return InjectionConfig(self.syntax_mode, self.gcn_layers, self.span_refine, self.hard_adjacency)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.embed_dim, self.hidden_dim, self.encoder_layers,
                             self.encoder, heads=self.heads, dropout=self.dropout)

    def to_dict(self):
        return asdict(self)


@dataclass
class Vocabularies:
    words: Vocabulary
    pos: list[str]
    deprels: list[str]
    edge_labels: list[str]  # without the no-edge class
    node_attrs: tuple[str, ...] = ()
    edge_attrs: tuple[str, ...] = ()

    @property
    def edge_classes(self) -> list[str]:
        return [NO_EDGE] + list(self.edge_labels)

    def to_dict(self):
        return {"words": self.words.to_dict(), "pos": self.pos, "deprels": self.deprels,
                "edge_labels": self.edge_labels, "node_attrs": list(self.node_attrs),
                "edge_attrs": list(self.edge_attrs)}

    @classmethod
    def from_dict(cls, d):
        return cls(Vocabulary.from_dict(d["words"]), list(d["pos"]), list(d["deprels"]),
                   list(d["edge_labels"]), tuple(d["node_attrs"]), tuple(d["edge_attrs"]))

    @classmethod
    def from_records(cls, *corpora, min_count: int = 2, node_attrs=None, edge_attrs=None):
        """Inventories over the union of the given corpora."""
        records = [r for corpus in corpora for r in corpus]
        if not records:
            raise ValueError("cannot build vocabularies from an empty dataset")
        if node_attrs is None:
            node_attrs = next((r[2].node_attrs for r in records if r[2].node_attrs), ())
        if edge_attrs is None:
            edge_attrs = next((r[2].edge_attrs for r in records if r[2].edge_attrs), ())
        return cls(build_vocab([r[0].forms for r in records], min_count),
                   sorted({p for r in records for p in r[0].pos}),
                   sorted({d for r in records for d in r[0].deprels}),
                   edge_label_vocabulary(records), tuple(node_attrs), tuple(edge_attrs))


@dataclass
class Example:
    """A record with every supervision signal converted to arrays."""

    sent: AnnotatedSentence
    graph: SemanticGraph
    attrs: AttributeSet
    ids: np.ndarray
    pos_ids: np.ndarray
    pos_weights: np.ndarray
    heads: np.ndarray
    deprel_ids: np.ndarray
    deprel_weights: np.ndarray
    targets: CascadeTargets


@dataclass
class ParseOutput:
    graph: SemanticGraph
    attrs: AttributeSet
    tree: DecodedTree | None
    pos: list[str] | None
    word_labels: list[str]
    problems: list[str] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.graph.is_root_only

    @property
    def valid(self) -> bool:
        return not self.problems


def _lookup(table: dict[str, int], items) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array([table.get(x, -1) for x in items], dtype=np.int64)
    weights = (ids >= 0).astype(np.float64)
    return np.maximum(ids, 0), weights


class ParserModel(Module):
    def __init__(self, config: ModelConfig, vocabs: Vocabularies, rng: np.random.Generator):
        self.config = config
        self.vocabs = vocabs
        d = config.hidden_dim
        self.encoder = Encoder(config.encoder_config(len(vocabs.words)), rng)
        inj = config.injection
        self.syntax = None
        self.refiner = None
        if inj.mode != "none":
            self.syntax = SyntaxParser(d, len(vocabs.pos), len(vocabs.deprels), rng, config.mlp_dim,
                                       config.arc_dim, config.label_dim, config.dropout)
        if inj.mode == "gcn":
            self.refiner = GCNRefiner(d, len(vocabs.deprels), rng, inj.gcn_layers)
        elif inj.mode == "attention":
            self.refiner = AttentionRefiner(d, config.arc_dim, config.label_dim, rng)
        self.cascade = CascadeHeads(d, len(vocabs.edge_classes), vocabs.node_attrs, vocabs.edge_attrs, rng,
                                    mlp_dim=config.mlp_dim, pair_dim=config.pair_dim,
                                    attr_dim=config.attr_dim, attr_channels=config.attr_channels,
                                    dropout=config.dropout, span_refine=config.span_refine)
        self._pos_index = {p: i for i, p in enumerate(vocabs.pos)}
        self._deprel_index = {p: i for i, p in enumerate(vocabs.deprels)}
        self._edge_index = {lab: i for i, lab in enumerate(vocabs.edge_classes)}
        self.assign_names()

    @property
    def stage_calls(self):
        return self.cascade.stage_calls

    # -- data ------------------------------------------------------------------
    def prepare(self, record: Record) -> Example:
        sent, graph, attrs = record
        pos_ids, pos_w = _lookup(self._pos_index, sent.pos)
        dep_ids, dep_w = _lookup(self._deprel_index, sent.deprels)
        targets = build_targets(sent, graph, attrs, self._edge_index, self.vocabs.node_attrs,
                                self.vocabs.edge_attrs)
        return Example(sent, graph, attrs, self.vocabs.words.encode(sent.forms), pos_ids, pos_w,
                       np.array(sent.heads, dtype=np.int64), dep_ids, dep_w, targets)

    # -- shared trunk ----------------------------------------------------------
    def contextualize(self, ids, rng=None):
        """Encoder states, optionally refined by predicted syntax; also the syntax scores."""
        H0 = self.encoder(ids, rng, pad_id=-1)
        if self.syntax is None:
            return H0, None
        heads = self.syntax.score(H0, rng)
        if self.refiner is None:
            return H0, heads
        A_h = head_adjacency(heads, self.config.hard_adjacency)
        if isinstance(self.refiner, GCNRefiner):
            return self.refiner(H0, A_h, label_distribution(heads)), heads
        return self.refiner(H0, heads, A_h), heads

    # -- training ----------------------------------------------------------------
    def sentence_losses(self, ex: Example, active=TERMS, rng=None) -> dict[str, Tensor]:
        """Teacher-forced loss terms; inactive terms are exact zeros and are not computed."""
        active = set(active)
        if self.syntax is None:
            active -= set(SYNTAX_TERMS)
        zero = Tensor(np.zeros(()))
        out = {t: zero for t in TERMS}
        H, heads = self.contextualize(ex.ids, rng)
        t = ex.targets
        cas = self.cascade
        if "pos" in active:
            out["pos"] = F.cross_entropy(heads.pos, ex.pos_ids, ex.pos_weights)
        if "tree" in active:
            arc = F.cross_entropy(heads.arc, ex.heads - 1)
            out["tree"] = arc + F.cross_entropy(heads.label_logits(ex.heads), ex.deprel_ids, ex.deprel_weights)
        if "cls" in active:
            out["cls"] = F.cross_entropy(cas.classify_words(H, rng), t.word_labels)
        if not active & {"span", "edge", "attr_mask", "attr_value"} or not t.semantic:
            return out
        nodes = cas.generate_nodes([WORD_LABELS[i] for i in t.word_labels], H)
        if "span" in active and t.syntactic:
            out["span"] = F.cross_entropy(cas.assign_spans(nodes, rng), t.owners)
        nodes = cas.refine_spans(nodes, t.owners)
        if "edge" in active:
            logits = cas.score_semantic_edges(nodes, rng)
            m1 = logits.shape[0]
            weights = 1.0 - np.eye(m1)
            out["edge"] = F.cross_entropy(F.reshape(logits, (m1 * m1, -1)), t.edge_targets.reshape(-1),
                                          weights.reshape(-1))
        if active & {"attr_mask", "attr_value"}:
            from .training import attribute_value_loss

            att = cas.predict_attributes(nodes, t.edge_pairs, rng)
            mask_terms, value_terms, sizes = [], [], []
            for pred, logits, gold, mask in ((att.node_values, att.node_mask_logits, t.node_values, t.node_mask),
                                             (att.edge_values, att.edge_mask_logits, t.edge_values, t.edge_mask)):
                if pred is None or pred.size == 0:
                    continue
                mask_terms.append(F.binary_cross_entropy(logits, mask))
                value_terms.append(attribute_value_loss(pred, gold, mask))
                sizes.append(mask.sum())
            if mask_terms and "attr_mask" in active:
                out["attr_mask"] = mask_terms[0] if len(mask_terms) == 1 else (mask_terms[0] + mask_terms[1]) * 0.5
            if value_terms and "attr_value" in active:
                out["attr_value"] = value_terms[0] if len(value_terms) == 1 else (value_terms[0] + value_terms[1]) * 0.5
        return out

    # -- inference ---------------------------------------------------------------
    def predict_syntax(self, sent: AnnotatedSentence | list[str], decode: str = "mst"):
        """Predicted tree and POS tags for a sentence (or a list of forms)."""
        if self.syntax is None:
            raise ValueError("model was built without syntax heads (syntax_mode='none')")
        forms = sent.forms if isinstance(sent, AnnotatedSentence) else list(sent)
        with no_grad():
            H0 = self.encoder(self.vocabs.words.encode(forms), None, pad_id=-1)
            heads = self.syntax.score(H0)
        tree = decode_tree(heads.arc.data, heads.label_scores(), decode)
        pos = [self.vocabs.pos[i] for i in heads.pos.data.argmax(axis=1)]
        return tree, pos

    def parse(self, sent: AnnotatedSentence | list[str], decode: str = "mst") -> ParseOutput:
        forms = sent.forms if isinstance(sent, AnnotatedSentence) else list(sent)
        cas = self.cascade

        def stage(name, fn, *args):
            try:
                return fn(*args)
            except StageError:
                raise
            except Exception as exc:  # annotate with the failing stage
                raise StageError(name, exc) from exc

        with no_grad():
            H, heads = stage("encoder", self.contextualize, self.vocabs.words.encode(forms))
            tree = pos = None
            if heads is not None:
                tree = stage("syntax", decode_tree, heads.arc.data, heads.label_scores(), decode)
                pos = [self.vocabs.pos[i] for i in heads.pos.data.argmax(axis=1)]
            label_ids = stage("classify", cas.classify_words, H).data.argmax(axis=1)
            labels = [WORD_LABELS[i] for i in label_ids]
            nodes = stage("generate", cas.generate_nodes, labels, H)
            problems = []
            if nodes.degenerate:
                if nodes.syntactic:
                    problems.append(f"{len(nodes.syntactic)} syntactic node(s) without a semantic owner")
                graph, ids = assemble_graph([], [], [], [], self.vocabs.edge_classes)
                return ParseOutput(graph, AttributeSet(self.vocabs.node_attrs, self.vocabs.edge_attrs),
                                   tree, pos, [lab.value for lab in labels], problems)
            owners = decode_spans(stage("span", cas.assign_spans, nodes).data)
            nodes = stage("span_refine", cas.refine_spans, nodes, owners)
            edges = decode_edges(stage("edge", cas.score_semantic_edges, nodes).data)
            graph, ids = assemble_graph(nodes.semantic, nodes.syntactic, owners, edges, self.vocabs.edge_classes)
            pairs = [(i, j) for i, j, _ in edges if i != 0]
            att = stage("attributes", cas.predict_attributes, nodes, pairs)
        attrs = attributes_to_set(att, ids, self.vocabs.node_attrs, self.vocabs.edge_attrs)
        problems.extend(graph.problems(len(forms)))
        return ParseOutput(graph, attrs, tree, pos, [lab.value for lab in labels], problems)

    def oracle_attributes(self, record: Record) -> tuple[AttributeOutputs, list[str]]:
        """Attribute predictions over the gold structure (nodes, spans and edges)."""
        ex = self.prepare(record)
        t = ex.targets
        with no_grad():
            H, _ = self.contextualize(ex.ids)
            nodes = self.cascade.generate_nodes([WORD_LABELS[i] for i in t.word_labels], H)
            nodes = self.cascade.refine_spans(nodes, t.owners)
            return self.cascade.predict_attributes(nodes, t.edge_pairs), ["ROOT"] + t.gold_ids

    # -- persistence -------------------------------------------------------------
    def meta(self) -> dict:
        return {"config": self.config.to_dict(), "vocabs": self.vocabs.to_dict()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def checkpoint_bytes(self, extra: dict | None = None) -> bytes:
        return dump_checkpoint(self.state_arrays(), {**self.meta(), **(extra or {})})

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.state_arrays(), {**self.meta(), **(extra or {})})

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"parameter {name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)

    @classmethod
    def load(cls, path) -> "ParserModel":
        arrays, meta = load_checkpoint(path)
        model = cls(ModelConfig(**meta["config"]), Vocabularies.from_dict(meta["vocabs"]),
                    np.random.default_rng(0))
        model.load_arrays(arrays)
        return model


def parse_sentence(sent, model: ParserModel, decode: str = "mst") -> ParseOutput:
    return model.parse(sent, decode)
