"""Scene-graph data model.

Graphs are immutable values: every operation returns a new ``SceneGraph``.
Nodes keep insertion order and edges keep insertion order, so serialization
is deterministic and shuffling only happens when asked for explicitly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import DuplicateEdge, DuplicateNode, SelfLoop, UnknownNode, UnknownRelation

MAX_INSTANCES = 16

DEFAULT_RELATIONS = (
    "left",
    "right",
    "front",
    "behind",
    "standing_on",
    "bigger_than",
    "smaller_than",
)

DEFAULT_CLASSES = (
    "bed",
    "bookshelf",
    "chair",
    "desk",
    "lamp",
    "monitor",
    "nightstand",
    "sofa",
    "table",
    "wardrobe",
)


@dataclass(frozen=True, order=True)
class NodeRef:
    class_label: str
    instance_index: int

    def __post_init__(self):
        if not self.class_label or any(c.isspace() for c in self.class_label):
            raise ValueError(f"invalid class label {self.class_label!r}")
        if self.instance_index < 0:
            raise ValueError(f"negative instance index {self.instance_index}")

    @property
    def name(self) -> str:
        return f"{self.class_label}_{self.instance_index}"

    @classmethod
    def parse(cls, text: str) -> "NodeRef":
        """Parse ``chair_1`` (class labels may themselves contain underscores)."""
        label, sep, index = text.rpartition("_")
        if not sep or not label or not index.isdigit():
            raise ValueError(f"malformed node name {text!r}")
        return cls(label, int(index))

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    relation: str

    def __post_init__(self):
        if self.src == self.dst:
            raise SelfLoop(f"self-loop on {self.src}")

    def __str__(self):
        return f"{self.src} {self.dst} {self.relation}"


@dataclass(frozen=True)
class Schema:
    schema_id: str
    class_set: tuple[str, ...]
    relation_set: tuple[str, ...]
    inverse_map: Mapping[str, str] = field(default_factory=dict)
    support_relations: tuple[str, ...] = ()
    size_relations: tuple[str, ...] = ()
    # classes other objects may stand on (used by the synthetic corpus)
    supporter_classes: tuple[str, ...] = ()

    def __post_init__(self):
        for rel, inv in self.inverse_map.items():
            if rel not in self.relation_set or inv not in self.relation_set:
                raise ValueError(f"inverse pair {rel}->{inv} outside relation set")
            if self.inverse_map.get(inv) != rel:
                raise ValueError(f"inverse map is not an involution at {rel!r}")
        for rel in self.support_relations + self.size_relations:
            if rel not in self.relation_set:
                raise ValueError(f"unknown relation {rel!r} in schema subsets")

    def check_relation(self, relation: str) -> None:
        if relation not in self.relation_set:
            raise UnknownRelation(f"relation {relation!r} not in schema {self.schema_id!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.schema_id,
            "classes": list(self.class_set),
            "relations": list(self.relation_set),
            "inverse": dict(self.inverse_map),
            "support_relations": list(self.support_relations),
            "size_relations": list(self.size_relations),
            "supporters": list(self.supporter_classes),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schema":
        return cls(
            schema_id=data["id"],
            class_set=tuple(data["classes"]),
            relation_set=tuple(data["relations"]),
            inverse_map=dict(data.get("inverse", {})),
            support_relations=tuple(data.get("support_relations", ())),
            size_relations=tuple(data.get("size_relations", ())),
            supporter_classes=tuple(data.get("supporters", ())),
        )


DEFAULT_SCHEMA = Schema(
    schema_id="default",
    class_set=DEFAULT_CLASSES,
    relation_set=DEFAULT_RELATIONS,
    inverse_map={
        "left": "right",
        "right": "left",
        "front": "behind",
        "behind": "front",
        "bigger_than": "smaller_than",
        "smaller_than": "bigger_than",
    },
    support_relations=("standing_on",),
    size_relations=("bigger_than", "smaller_than"),
    supporter_classes=("desk", "nightstand", "table"),
)

_SCHEMAS: dict[str, Schema] = {DEFAULT_SCHEMA.schema_id: DEFAULT_SCHEMA}


def register_schema(schema: Schema) -> Schema:
    _SCHEMAS[schema.schema_id] = schema
    return schema


def get_schema(schema_id: str) -> Schema:
    try:
        return _SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"schema {schema_id!r} is not registered") from None


def load_schema_file(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return register_schema(Schema.from_dict(json.load(fh)))


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[NodeRef, ...] = ()
    edges: tuple[Edge, ...] = ()
    schema_id: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise DuplicateNode("duplicate node in node list")
        seen = set()
        for e in self.edges:
            if e.src not in node_set or e.dst not in node_set:
                missing = e.src if e.src not in node_set else e.dst
                raise UnknownNode(f"edge endpoint {missing} is not a node")
            if e in seen:
                raise DuplicateEdge(f"duplicate edge ({e})")
            seen.add(e)

    @property
    def schema(self) -> Schema:
        return get_schema(self.schema_id)

    def __contains__(self, item):
        if isinstance(item, NodeRef):
            return item in self.nodes
        return item in self.edges

    def replace(self, nodes=None, edges=None) -> "SceneGraph":
        return SceneGraph(
            self.nodes if nodes is None else nodes,
            self.edges if edges is None else edges,
            self.schema_id,
        )

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], nodes: Iterable[NodeRef] = (), schema_id="default"):
        """Build a graph whose node list is ``nodes`` followed by endpoints in first-mention order."""
        order = dict.fromkeys(nodes)
        edges = tuple(edges)
        for e in edges:
            order.setdefault(e.src)
            order.setdefault(e.dst)
        return cls(tuple(order), edges, schema_id)


def _require_node(g: SceneGraph, v: NodeRef) -> None:
    if v not in g.nodes:
        raise UnknownNode(f"{v} is not a node of the graph")


def add_node(g: SceneGraph, v: NodeRef) -> SceneGraph:
    if v in g.nodes:
        raise DuplicateNode(f"{v} is already a node of the graph")
    return g.replace(nodes=g.nodes + (v,))


def add_edge(g: SceneGraph, e: Edge) -> SceneGraph:
    _require_node(g, e.src)
    _require_node(g, e.dst)
    if e in g.edges:
        raise DuplicateEdge(f"duplicate edge ({e})")
    g.schema.check_relation(e.relation)
    return g.replace(edges=g.edges + (e,))


def remove_node(g: SceneGraph, v: NodeRef) -> SceneGraph:
    _require_node(g, v)
    return g.replace(
        nodes=tuple(n for n in g.nodes if n != v),
        edges=tuple(e for e in g.edges if v not in (e.src, e.dst)),
    )


def remove_edges(g: SceneGraph, edges: Iterable[Edge]) -> SceneGraph:
    drop = set(edges)
    return g.replace(edges=tuple(e for e in g.edges if e not in drop))


def incident_edges(g: SceneGraph, v: NodeRef) -> list[Edge]:
    _require_node(g, v)
    return [e for e in g.edges if e.src == v or e.dst == v]


def triplets(g: SceneGraph) -> list[tuple[NodeRef, str, NodeRef]]:
    return [(e.src, e.relation, e.dst) for e in g.edges]


def induced_subgraph(g: SceneGraph, keep: Iterable[NodeRef]) -> SceneGraph:
    keep = set(keep)
    return g.replace(
        nodes=tuple(n for n in g.nodes if n in keep),
        edges=tuple(e for e in g.edges if e.src in keep and e.dst in keep),
    )


def to_json(g: SceneGraph) -> dict:
    return {
        "schema": g.schema_id,
        "nodes": [{"class": n.class_label, "instance": n.instance_index} for n in g.nodes],
        "edges": [
            {
                "src": [e.src.class_label, e.src.instance_index],
                "dst": [e.dst.class_label, e.dst.instance_index],
                "rel": e.relation,
            }
            for e in g.edges
        ],
    }


def from_json(data: Mapping) -> SceneGraph:
    nodes = [NodeRef(n["class"], int(n["instance"])) for n in data.get("nodes", [])]
    edges = [
        Edge(NodeRef(e["src"][0], int(e["src"][1])), NodeRef(e["dst"][0], int(e["dst"][1])), e["rel"])
        for e in data.get("edges", [])
    ]
    g = SceneGraph.from_edges(edges, nodes, data.get("schema", "default"))
    schema = g.schema
    for e in g.edges:
        schema.check_relation(e.relation)
    return g
