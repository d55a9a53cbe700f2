"""UDS annotation data model: syntax, semantic relations and attributes.

Also holds CoNLL-U and Graph JSONL I/O, word-label derivation for the
cascade's classification stage, and the triple linearization used by the
S-score.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

ROOT_ID = "ROOT"
NO_EDGE = "Φ"
EDGE_KEY_SEP = "→"
ATTR_MIN, ATTR_MAX = -3.0, 3.0


class UDSError(Exception):
    """Base class for data-model errors."""


class ConlluParseError(UDSError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(UDSError):
    """An invariant of the data model does not hold."""


class SchemaError(ValidationError):
    pass


class AttributeRangeError(ValidationError):
    pass


class ReferentialError(ValidationError):
    pass


class RecordError(ValidationError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"record {index}: {cause}")
        self.index = index
        self.cause = cause


class NodeKind(str, enum.Enum):
    PREDICATE = "Predicate"
    ARGUMENT = "Argument"
    ROOT = "Root"


class WordLabel(str, enum.Enum):
    PHI = "Phi"
    SYN = "Syn"
    PRE = "Pre"
    ARG = "Arg"
    PREARG = "PreArg"


WORD_LABELS = tuple(WordLabel)


# ---------------------------------------------------------------------------
# syntax layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    index: int
    form: str
    pos: str = "_"

    def __post_init__(self):
        if not self.form:
            raise ValidationError(f"token {self.index}: empty form")


def tree_problems(heads: list[int] | tuple[int, ...]) -> list[str]:
    """Problems with a 1-based head vector under the root-is-its-own-head convention."""
    n = len(heads)
    problems = []
    roots = [i + 1 for i, h in enumerate(heads) if h == i + 1]
    if len(roots) != 1:
        problems.append(f"expected exactly one root, found {len(roots)}")
    if any(h < 1 or h > n for h in heads):
        problems.append("head index out of range")
        return problems
    for start in range(1, n + 1):
        seen = set()
        node = start
        while heads[node - 1] != node:
            if node in seen:
                problems.append(f"cycle through token {node}")
                return problems
            seen.add(node)
            node = heads[node - 1]
    return problems


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple[Token, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]
    sent_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "deprels", tuple(self.deprels))
        n = len(self.tokens)
        name = self.sent_id or "sentence"
        if n == 0:
            raise ValidationError(f"{name}: no tokens")
        if [t.index for t in self.tokens] != list(range(1, n + 1)):
            raise ValidationError(f"{name}: token indices must be 1..{n}")
        if len(self.heads) != n or len(self.deprels) != n:
            raise ValidationError(f"{name}: heads/deprels length mismatch")
        problems = tree_problems(self.heads)
        if problems:
            raise ValidationError(f"{name}: " + "; ".join(problems))

    @classmethod
    def build(cls, forms, pos, heads, deprels, sent_id=None) -> "AnnotatedSentence":
        tokens = tuple(Token(i + 1, f, p) for i, (f, p) in enumerate(zip(forms, pos)))
        return cls(tokens, tuple(heads), tuple(deprels), sent_id)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def pos(self) -> list[str]:
        return [t.pos for t in self.tokens]

    @property
    def root(self) -> int:
        return next(i + 1 for i, h in enumerate(self.heads) if h == i + 1)

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {i: [] for i in range(1, len(self) + 1)}
        for i, h in enumerate(self.heads, start=1):
            if h != i:
                out[h].append(i)
        return out


def parse_conllu(text: str) -> list[AnnotatedSentence]:
    """Read a CoNLL-U document; multiword ranges and empty nodes are skipped."""
    sentences = []
    rows: list[tuple[int, list[str]]] = []
    sent_id = None
    start_line = 1

    def flush():
        nonlocal rows, sent_id
        if rows:
            name = sent_id or f"sentence {len(sentences) + 1} (line {start_line})"
            heads = []
            for k, (line_no, cols) in enumerate(rows):
                try:
                    head = int(cols[6])
                except ValueError:
                    raise ConlluParseError(line_no, f"HEAD is not an integer: {cols[6]!r}") from None
                heads.append(k + 1 if head == 0 else head)
            if sum(1 for _, cols in rows if cols[6] == "0") != 1:
                raise ValidationError(f"{name}: expected exactly one root (HEAD 0)")
            try:
                sentences.append(AnnotatedSentence.build(
                    [c[1] for _, c in rows], [c[3] for _, c in rows], heads,
                    [c[7] for _, c in rows], sent_id=sent_id))
            except ValidationError as exc:
                raise ValidationError(f"{name}: {exc}") from None
        rows = []
        sent_id = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            start_line = line_no + 1
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("sent_id"):
                sent_id = line.split("=", 1)[-1].strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluParseError(line_no, f"expected 10 tab-separated columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            idx = int(cols[0])
        except ValueError:
            raise ConlluParseError(line_no, f"bad ID {cols[0]!r}") from None
        if idx != len(rows) + 1:
            raise ConlluParseError(line_no, f"token ID {idx} out of sequence")
        rows.append((line_no, cols))
    flush()
    return sentences


def write_conllu(sentences: Iterable[AnnotatedSentence]) -> str:
    blocks = []
    for s in sentences:
        lines = [f"# sent_id = {s.sent_id}"] if s.sent_id else []
        for tok, head, rel in zip(s.tokens, s.heads, s.deprels):
            h = 0 if head == tok.index else head
            lines.append("\t".join([str(tok.index), tok.form, "_", tok.pos, "_", "_", str(h), rel, "_", "_"]))
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# semantic layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemNode:
    id: str
    kind: NodeKind
    center: int | None = None
    span: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))
        if self.span is not None:
            object.__setattr__(self, "span", tuple(sorted(set(int(i) for i in self.span))))


@dataclass(frozen=True)
class SemEdge:
    src: str
    dst: str
    label: str


@dataclass(frozen=True)
class SemanticGraph:
    """Predicate/argument nodes plus the virtual root and typed edges.

    Construction does not enforce invariants so that decoded graphs can be
    carried around and flagged; call :meth:`problems` or :meth:`check`.
    """

    nodes: tuple[SemNode, ...]
    edges: tuple[SemEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @classmethod
    def root_only(cls) -> "SemanticGraph":
        return cls((SemNode(ROOT_ID, NodeKind.ROOT),), ())

    def node(self, node_id: str) -> SemNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def semantic_nodes(self) -> list[SemNode]:
        return [n for n in self.nodes if n.kind is not NodeKind.ROOT]

    @property
    def is_root_only(self) -> bool:
        return not self.semantic_nodes

    def problems(self, n_tokens: int | None = None) -> list[str]:
        out = []
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            out.append("duplicate node id")
        roots = [n for n in self.nodes if n.kind is NodeKind.ROOT]
        if len(roots) != 1 or roots[0].id != ROOT_ID:
            out.append(f"expected a single Root node with id {ROOT_ID!r}")
        owners: dict[int, list[SemNode]] = {}
        for n in self.semantic_nodes:
            if n.center is None or n.span is None:
                out.append(f"node {n.id}: missing center or span")
                continue
            if n.center not in n.span:
                out.append(f"node {n.id}: center {n.center} not in span")
            if n_tokens is not None and any(i < 1 or i > n_tokens for i in n.span):
                out.append(f"node {n.id}: span outside sentence")
            for i in n.span:
                owners.setdefault(i, []).append(n)
        for tok, nodes in owners.items():
            if len(nodes) == 1:
                continue
            kinds = sorted(n.kind.value for n in nodes)
            if not (len(nodes) == 2 and kinds == ["Argument", "Predicate"]
                    and all(n.center == tok for n in nodes)):
                out.append(f"token {tok}: spans overlap ({', '.join(n.id for n in nodes)})")
        idset = set(ids)
        seen_pairs = set()
        for e in self.edges:
            if e.src not in idset or e.dst not in idset:
                out.append(f"edge {e.src}{EDGE_KEY_SEP}{e.dst}: unknown endpoint")
                continue
            if e.src == e.dst:
                out.append(f"edge {e.src}{EDGE_KEY_SEP}{e.dst}: self loop")
            if (e.src, e.dst) in seen_pairs:
                out.append(f"edge {e.src}{EDGE_KEY_SEP}{e.dst}: duplicate")
            seen_pairs.add((e.src, e.dst))
            if not e.label or e.label == NO_EDGE:
                out.append(f"edge {e.src}{EDGE_KEY_SEP}{e.dst}: invalid label {e.label!r}")
        if not out:
            reach = self.reachable()
            missing = [n.id for n in self.semantic_nodes if n.id not in reach]
            if missing:
                out.append(f"unreachable from root: {', '.join(missing)}")
        return out

    def reachable(self) -> set[str]:
        adj: dict[str, list[str]] = {}
        for e in self.edges:
            adj.setdefault(e.src, []).append(e.dst)
        seen = {ROOT_ID}
        todo = [ROOT_ID]
        while todo:
            for nxt in adj.get(todo.pop(), []):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return seen

    def check(self, n_tokens: int | None = None) -> None:
        problems = self.problems(n_tokens)
        if problems:
            kind = ReferentialError if any("unknown endpoint" in p for p in problems) else ValidationError
            raise kind("; ".join(problems))


# ---------------------------------------------------------------------------
# attribute layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributeSet:
    """Node- and edge-level attribute values with binary annotation masks.

    Values are keyed by node id (nodes) or ``(src, dst)`` (edges), then by
    attribute name.  Absent entries behave as mask 0.
    """

    node_attrs: tuple[str, ...] = ()
    edge_attrs: tuple[str, ...] = ()
    node_values: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    node_mask: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    edge_values: Mapping[tuple[str, str], Mapping[str, float]] = field(default_factory=dict)
    edge_mask: Mapping[tuple[str, str], Mapping[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "node_attrs", tuple(self.node_attrs))
        object.__setattr__(self, "edge_attrs", tuple(self.edge_attrs))

    def problems(self) -> list[str]:
        out = []
        for level, names, values, mask in (("node", self.node_attrs, self.node_values, self.node_mask),
                                           ("edge", self.edge_attrs, self.edge_values, self.edge_mask)):
            for key, entries in values.items():
                for name, v in entries.items():
                    if name not in names:
                        out.append(f"{level} attribute {name!r} not in schema")
                    elif not (ATTR_MIN <= v <= ATTR_MAX):
                        out.append(f"{level} {key} {name}={v} outside [{ATTR_MIN:g}, {ATTR_MAX:g}]")
            for key, entries in mask.items():
                for name, m in entries.items():
                    if m not in (0, 1):
                        out.append(f"{level} {key} {name}: mask {m} not in {{0, 1}}")
        return out

    def check(self) -> None:
        for p in self.problems():
            if "not in schema" in p:
                raise SchemaError(p)
            if "outside" in p:
                raise AttributeRangeError(p)
            raise ValidationError(p)

    def node_entry(self, node_id: str, name: str) -> tuple[float, int]:
        v = self.node_values.get(node_id, {}).get(name)
        m = self.node_mask.get(node_id, {}).get(name, 0)
        return (0.0, 0) if v is None else (float(v), int(m))

    def edge_entry(self, key: tuple[str, str], name: str) -> tuple[float, int]:
        v = self.edge_values.get(key, {}).get(name)
        m = self.edge_mask.get(key, {}).get(name, 0)
        return (0.0, 0) if v is None else (float(v), int(m))


# ---------------------------------------------------------------------------
# derived views
# ---------------------------------------------------------------------------

def derive_word_labels(sent: AnnotatedSentence, graph: SemanticGraph) -> list[WordLabel]:
    n = len(sent)
    pred_centers: dict[int, int] = {}
    arg_centers: dict[int, int] = {}
    covered = set()
    for node in graph.semantic_nodes:
        table = pred_centers if node.kind is NodeKind.PREDICATE else arg_centers
        table[node.center] = table.get(node.center, 0) + 1
        covered.update(node.span)
    labels = []
    for i in range(1, n + 1):
        p, a = pred_centers.get(i, 0), arg_centers.get(i, 0)
        if p > 1 or a > 1:
            raise ValidationError(f"token {i} is the center of two nodes of the same kind")
        if p and a:
            labels.append(WordLabel.PREARG)
        elif p:
            labels.append(WordLabel.PRE)
        elif a:
            labels.append(WordLabel.ARG)
        elif i in covered:
            labels.append(WordLabel.SYN)
        else:
            labels.append(WordLabel.PHI)
    return labels


def linearize_arborescence(sent: AnnotatedSentence, graph: SemanticGraph) -> list[tuple]:
    """Triples for graph matching, sorted.

    kind(n, K), instance(n, center form), nonhead(n, form, offset from center),
    semedge(src, dst, label) for non-root edges and rootedge(ROOT, dst).
    """
    forms = sent.forms
    triples = []
    for node in graph.semantic_nodes:
        triples.append(("kind", node.id, node.kind.value))
        triples.append(("instance", node.id, forms[node.center - 1]))
        for i in node.span:
            if i != node.center:
                triples.append(("nonhead", node.id, forms[i - 1], i - node.center))
    for e in graph.edges:
        if e.src == ROOT_ID:
            triples.append(("rootedge", ROOT_ID, e.dst))
        else:
            triples.append(("semedge", e.src, e.dst, e.label))
    return sorted(triples, key=lambda t: tuple(str(x) for x in t))


# ---------------------------------------------------------------------------
# Graph JSONL
# ---------------------------------------------------------------------------

Record = tuple[AnnotatedSentence, SemanticGraph, AttributeSet]


def validate_record(sent: AnnotatedSentence, graph: SemanticGraph, attrs: AttributeSet) -> None:
    graph.check(len(sent))
    attrs.check()
    ids = {n.id for n in graph.nodes}
    for node_id in list(attrs.node_values) + list(attrs.node_mask):
        if node_id not in ids:
            raise ReferentialError(f"attribute for unknown node {node_id!r}")
    pairs = {(e.src, e.dst) for e in graph.edges}
    for key in list(attrs.edge_values) + list(attrs.edge_mask):
        if key not in pairs:
            raise ReferentialError(f"attribute for unknown edge {key[0]}{EDGE_KEY_SEP}{key[1]}")


def record_to_json(sent: AnnotatedSentence, graph: SemanticGraph, attrs: AttributeSet) -> dict:
    def pack(values, mask):
        out = {}
        for key in sorted(set(values) | set(mask)):
            names = sorted(set(values.get(key, {})) | set(mask.get(key, {})))
            out[key] = {n: {"v": float(values.get(key, {}).get(n, 0.0)),
                            "m": int(mask.get(key, {}).get(n, 0))} for n in names}
        return out

    edge_packed = pack(attrs.edge_values, attrs.edge_mask)
    return {
        "tokens": sent.forms,
        "pos": sent.pos,
        "heads": list(sent.heads),
        "deprels": list(sent.deprels),
        "nodes": [{"id": n.id, "kind": n.kind.value, "center": n.center,
                   "span": None if n.span is None else list(n.span)} for n in graph.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "label": e.label} for e in graph.edges],
        "node_attrs": pack(attrs.node_values, attrs.node_mask),
        "edge_attrs": {f"{k[0]}{EDGE_KEY_SEP}{k[1]}": v for k, v in edge_packed.items()},
    }


def record_from_json(obj: dict, node_schema: tuple[str, ...], edge_schema: tuple[str, ...],
                     allow_flagged: bool = False) -> Record:
    """Decode one record and validate it.

    A record carrying a non-empty ``problems`` list was written as an
    explicitly flagged prediction; it is returned unvalidated when
    ``allow_flagged`` is set and rejected otherwise.
    """
    sent = AnnotatedSentence.build(obj["tokens"], obj["pos"], obj["heads"], obj["deprels"],
                                   sent_id=obj.get("sent_id"))
    graph = SemanticGraph(
        tuple(SemNode(n["id"], NodeKind(n["kind"]), n.get("center"),
                      None if n.get("span") is None else tuple(n["span"])) for n in obj["nodes"]),
        tuple(SemEdge(e["src"], e["dst"], e["label"]) for e in obj["edges"]))

    def unpack(section, schema, key_fn):
        values, mask = {}, {}
        for raw_key, entries in section.items():
            key = key_fn(raw_key)
            for name, vm in entries.items():
                if name not in schema:
                    raise SchemaError(f"attribute {name!r} not declared in header")
                values.setdefault(key, {})[name] = float(vm["v"])
                mask.setdefault(key, {})[name] = int(vm["m"])
        return values, mask

    def edge_key(raw: str):
        if EDGE_KEY_SEP not in raw:
            raise SchemaError(f"edge attribute key {raw!r} lacks {EDGE_KEY_SEP!r}")
        src, dst = raw.split(EDGE_KEY_SEP, 1)
        return src, dst

    nv, nm = unpack(obj.get("node_attrs", {}), node_schema, str)
    ev, em = unpack(obj.get("edge_attrs", {}), edge_schema, edge_key)
    attrs = AttributeSet(node_schema, edge_schema, nv, nm, ev, em)
    problems = obj.get("problems") or []
    if problems and not allow_flagged:
        raise ValidationError(f"flagged record: {'; '.join(problems)}")
    if not problems:
        validate_record(sent, graph, attrs)
    return sent, graph, attrs


def dumps_graphs(records: Iterable[Record], node_attrs=None, edge_attrs=None, problems=None) -> str:
    """Graph JSONL text; ``problems[i]`` (optional) flags record ``i`` as knowingly invalid."""
    records = list(records)
    if node_attrs is None:
        node_attrs = records[0][2].node_attrs if records else ()
    if edge_attrs is None:
        edge_attrs = records[0][2].edge_attrs if records else ()
    lines = [json.dumps({"node_attrs": list(node_attrs), "edge_attrs": list(edge_attrs)}, ensure_ascii=False)]
    for i, (sent, graph, attrs) in enumerate(records):
        obj = record_to_json(sent, graph, attrs)
        if problems is not None and problems[i]:
            obj["problems"] = list(problems[i])
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def loads_graphs(text: str, allow_flagged: bool = False) -> list[Record]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaError("missing header record")
    header = json.loads(lines[0])
    if not isinstance(header, dict) or set(header) != {"node_attrs", "edge_attrs"}:
        raise SchemaError("first line must be the attribute schema header")
    node_schema, edge_schema = tuple(header["node_attrs"]), tuple(header["edge_attrs"])
    records = []
    for i, line in enumerate(lines[1:]):
        try:
            records.append(record_from_json(json.loads(line), node_schema, edge_schema, allow_flagged))
        except (UDSError, KeyError, TypeError, ValueError) as exc:
            raise RecordError(i, exc) from exc
    return records


def save_graphs(records: Iterable[Record], path, node_attrs=None, edge_attrs=None, problems=None) -> None:
    Path(path).write_text(dumps_graphs(records, node_attrs, edge_attrs, problems), encoding="utf-8")


def load_graphs(path, allow_flagged: bool = False) -> list[Record]:
    return loads_graphs(Path(path).read_text(encoding="utf-8"), allow_flagged)


def edge_label_vocabulary(records: Iterable[Record]) -> list[str]:
    return sorted({e.label for _, g, _ in records for e in g.edges})
