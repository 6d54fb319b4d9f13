"""Scene graph <-> token sequence codec.

Each edge becomes an 8-token frame::

    [BOQ] subj_cls subj_ind obj_cls obj_ind [SEP] predicate [EOQ]

and a graph is its frames in edge order followed by ``[EOS]``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ContextOverflow, FramingError, UnknownSymbol
from .scenegraph import MAX_INSTANCES, Edge, NodeRef, SceneGraph, Schema

PAD, UNK, BOQ, SEP, EOQ, EOS = "[PAD]", "[UNK]", "[BOQ]", "[SEP]", "[EOQ]", "[EOS]"
SPECIAL_TOKENS = (PAD, UNK, BOQ, SEP, EOQ, EOS)
PAD_ID, UNK_ID, BOQ_ID, SEP_ID, EOQ_ID, EOS_ID = range(6)

FRAME_LEN = 8
QUERY_LEN = 6
PREDICATE_OFFSET = 6
VOCAB_HEADER = "SGT-VOCAB v1"


class Role(enum.IntEnum):
    SPECIAL = 0
    SUBJECT = 1
    OBJECT = 2
    PREDICATE = 3


FRAME_ROLES = (
    Role.SPECIAL,
    Role.SUBJECT,
    Role.SUBJECT,
    Role.OBJECT,
    Role.OBJECT,
    Role.SPECIAL,
    Role.PREDICATE,
    Role.SPECIAL,
)


def instance_token(i: int) -> str:
    return f"<{i}>"


class Vocabulary:
    def __init__(self, tokens: Sequence[str], n_classes: int, n_instances: int, n_relations: int, schema_id="default"):
        self.tokens = tuple(tokens)
        if self.tokens[:6] != SPECIAL_TOKENS:
            raise ValueError("special tokens must occupy ids 0-5")
        if len(self.tokens) != 6 + n_classes + n_instances + n_relations:
            raise ValueError("block sizes do not add up to the token count")
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        self.schema_id = schema_id
        self.class_range = range(6, 6 + n_classes)
        self.instance_range = range(self.class_range.stop, self.class_range.stop + n_instances)
        self.relation_range = range(self.instance_range.stop, self.instance_range.stop + n_relations)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self.tokens == other.tokens
            and (self.class_range, self.instance_range, self.relation_range)
            == (other.class_range, other.instance_range, other.relation_range)
        )

    @property
    def max_instances(self) -> int:
        return len(self.instance_range)

    @property
    def relations(self) -> tuple[str, ...]:
        return self.tokens[self.relation_range.start:self.relation_range.stop]

    @property
    def classes(self) -> tuple[str, ...]:
        return self.tokens[self.class_range.start:self.class_range.stop]

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownSymbol(f"token {token!r} not in vocabulary") from None

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise UnknownSymbol(f"token id {token_id} out of range")
        return self.tokens[token_id]

    def class_id(self, label: str) -> int:
        i = self._ids.get(label, -1)
        if i not in self.class_range:
            raise UnknownSymbol(f"unknown class {label!r}")
        return i

    def instance_id(self, index: int) -> int:
        if not 0 <= index < self.max_instances:
            raise UnknownSymbol(f"instance index {index} outside 0..{self.max_instances - 1}")
        return self.instance_range.start + index

    def relation_id(self, rel: str) -> int:
        i = self._ids.get(rel, -1)
        if i not in self.relation_range:
            raise UnknownSymbol(f"unknown relation {rel!r}")
        return i

    def dumps(self) -> str:
        header = (
            f"{VOCAB_HEADER} schema={self.schema_id} classes={len(self.class_range)} "
            f"instances={len(self.instance_range)} relations={len(self.relation_range)}"
        )
        return "\n".join((header,) + self.tokens) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(VOCAB_HEADER):
            raise ValueError(f"missing {VOCAB_HEADER!r} header")
        meta = dict(kv.split("=", 1) for kv in lines[0][len(VOCAB_HEADER):].split())
        return cls(
            lines[1:],
            int(meta["classes"]),
            int(meta["instances"]),
            int(meta["relations"]),
            meta.get("schema", "default"),
        )


def build_vocab(schema: Schema, max_instances: int = MAX_INSTANCES) -> Vocabulary:
    if not schema.class_set or not schema.relation_set:
        raise ValueError("schema needs at least one class and one relation")
    classes = sorted(set(schema.class_set))
    tokens = list(SPECIAL_TOKENS) + classes
    tokens += [instance_token(i) for i in range(max_instances)]
    tokens += list(schema.relation_set)
    return Vocabulary(tokens, len(classes), max_instances, len(schema.relation_set), schema.schema_id)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    role_mask: tuple[Role, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "role_mask", tuple(self.role_mask))
        if len(self.ids) != len(self.role_mask):
            raise ValueError("ids and role_mask differ in length")

    def __len__(self):
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + other.ids, self.role_mask + other.role_mask)

    @classmethod
    def concat(cls, parts: Iterable["TokenSequence"]) -> "TokenSequence":
        ids: list[int] = []
        roles: list[Role] = []
        for p in parts:
            ids.extend(p.ids)
            roles.extend(p.role_mask)
        return cls(tuple(ids), tuple(roles))


EMPTY = TokenSequence((), ())


def _node_ids(v: Vocabulary, n: NodeRef) -> tuple[int, int]:
    return v.class_id(n.class_label), v.instance_id(n.instance_index)


def encode_triplet(v: Vocabulary, t: tuple[NodeRef, str, NodeRef]) -> TokenSequence:
    subj, rel, obj = t
    ids = (BOQ_ID, *_node_ids(v, subj), *_node_ids(v, obj), SEP_ID, v.relation_id(rel), EOQ_ID)
    return TokenSequence(ids, FRAME_ROLES)


def encode_edges(v: Vocabulary, edges: Iterable[Edge]) -> TokenSequence:
    return TokenSequence.concat(encode_triplet(v, (e.src, e.relation, e.dst)) for e in edges)


def encode_graph(
    v: Vocabulary,
    g: SceneGraph,
    context_length: int | None = None,
    pad: bool = False,
) -> TokenSequence:
    needed = FRAME_LEN * len(g.edges) + 1
    if context_length is not None and needed > context_length:
        raise ContextOverflow(f"graph needs {needed} tokens, context holds {context_length}")
    seq = encode_edges(v, g.edges) + TokenSequence((EOS_ID,), (Role.SPECIAL,))
    if pad:
        if context_length is None:
            raise ValueError("padding requires a context length")
        extra = context_length - len(seq)
        seq = seq + TokenSequence((PAD_ID,) * extra, (Role.SPECIAL,) * extra)
    return seq


def build_query(v: Vocabulary, subj: NodeRef, obj: NodeRef) -> TokenSequence:
    ids = (BOQ_ID, *_node_ids(v, subj), *_node_ids(v, obj), SEP_ID)
    return TokenSequence(ids, FRAME_ROLES[:QUERY_LEN])


def decode_sequence(v: Vocabulary, s: TokenSequence | Sequence[int]) -> SceneGraph:
    ids = s.ids if isinstance(s, TokenSequence) else tuple(int(i) for i in s)
    edges: list[Edge] = []
    pos = 0
    n = len(ids)

    def expect(offset: int, allowed: range | tuple, what: str) -> int:
        p = pos + offset
        if p >= n or ids[p] not in allowed:
            raise FramingError(p, what)
        return ids[p]

    while True:
        if pos >= n:
            raise FramingError(pos, "[BOQ] or [EOS]")
        if ids[pos] == EOS_ID:
            break
        expect(0, (BOQ_ID,), "[BOQ] or [EOS]")
        s_cls = expect(1, v.class_range, "subject class")
        s_ind = expect(2, v.instance_range, "subject instance")
        o_cls = expect(3, v.class_range, "object class")
        o_ind = expect(4, v.instance_range, "object instance")
        expect(5, (SEP_ID,), "[SEP]")
        rel = expect(6, v.relation_range, "predicate")
        expect(7, (EOQ_ID,), "[EOQ]")
        src = NodeRef(v.tokens[s_cls], s_ind - v.instance_range.start)
        dst = NodeRef(v.tokens[o_cls], o_ind - v.instance_range.start)
        if src == dst:
            raise FramingError(pos + 3, "object distinct from subject")
        edges.append(Edge(src, dst, v.tokens[rel]))
        pos += FRAME_LEN
    for p in range(pos + 1, n):
        if ids[p] != PAD_ID:
            raise FramingError(p, "[PAD] after [EOS]")
    return SceneGraph.from_edges(edges, schema_id=v.schema_id)
