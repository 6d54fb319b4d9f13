"""Synthetic scene corpus, triplet text IO, shuffle augmentation and DOT export.

Axis convention used by the geometric oracle: ``+x`` points to the viewer's
right, and a smaller ``y`` is closer to the viewer (in front).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .consistency import is_spatially_consistent
from .errors import GenerationFailure, ParseError
from .scenegraph import (
    DEFAULT_SCHEMA,
    MAX_INSTANCES,
    Edge,
    NodeRef,
    SceneGraph,
    Schema,
)

SIZE_RATIO = 1.5
MAX_PLACEMENT_ATTEMPTS = 32

# typical footprint of the default classes, arbitrary units
BASE_SIZES = {
    "bed": 4.0,
    "bookshelf": 3.0,
    "chair": 1.2,
    "desk": 2.5,
    "lamp": 0.5,
    "monitor": 0.6,
    "nightstand": 1.2,
    "sofa": 3.5,
    "table": 2.5,
    "wardrobe": 4.5,
}
SMALL_SIZE = 1.0


@dataclass(frozen=True)
class PlacedObject:
    node: NodeRef
    x: float
    y: float
    size: float
    support_of: Optional[NodeRef] = None

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError("size must be positive")
        if self.support_of == self.node:
            raise ValueError("an object cannot stand on itself")


@dataclass(frozen=True)
class GenConfig:
    node_count_range: tuple[int, int] = (3, 5)
    margin: float = 0.5
    seed: int = 0
    density: float = 0.6
    shuffle_copies: int = 3
    extent: float = 10.0
    support_probability: float = 0.7
    schema: Schema = field(default=DEFAULT_SCHEMA, compare=False)

    def __post_init__(self):
        lo, hi = self.node_count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad node count range {self.node_count_range}")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.shuffle_copies < 0:
            raise ValueError("shuffle_copies must be non-negative")


def _rng(cfg: GenConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, stream]))


def _separated(a: tuple[float, float], b: tuple[float, float], gap: float) -> bool:
    return abs(a[0] - b[0]) >= gap or abs(a[1] - b[1]) >= gap


def place_objects(cfg: GenConfig) -> list[PlacedObject]:
    rng = _rng(cfg, 0)
    schema = cfg.schema
    lo, hi = cfg.node_count_range
    n = int(rng.integers(lo, hi + 1))
    # an unbounded margin must not make placement impossible
    gap = min(cfg.margin, cfg.extent / max(n, 1))

    counts: dict[str, int] = {}
    objs: list[PlacedObject] = []
    for _ in range(n):
        label = schema.class_set[int(rng.integers(len(schema.class_set)))]
        counts[label] = counts.get(label, 0) + 1
        if counts[label] >= MAX_INSTANCES:
            # class exhausted, pick one that still has free instance indices
            free = [c for c in schema.class_set if counts.get(c, 0) < MAX_INSTANCES - 1]
            if not free:
                raise GenerationFailure("instance indices exhausted")
            counts[label] -= 1
            label = free[int(rng.integers(len(free)))]
            counts[label] = counts.get(label, 0) + 1
        node = NodeRef(label, counts[label])
        base = BASE_SIZES.get(label)
        if base is None:
            base = float(rng.uniform(0.4, 4.0))
        size = base * float(rng.uniform(0.8, 1.25))

        supporters = [o for o in objs if o.node.class_label in schema.supporter_classes and o.support_of is None]
        support = None
        if base < SMALL_SIZE and supporters and rng.random() < cfg.support_probability:
            support = supporters[int(rng.integers(len(supporters)))]

        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            if attempt == MAX_PLACEMENT_ATTEMPTS // 2:
                # crowded supporter, place the object on the floor instead
                support = None
            if support is not None:
                side = 1.0 if rng.random() < 0.5 else -1.0
                x = support.x + side * float(rng.uniform(gap, 1.5 * gap))
                y = support.y + float(rng.uniform(-0.5, 0.5)) * gap
            else:
                x = float(rng.uniform(0.0, cfg.extent))
                y = float(rng.uniform(0.0, cfg.extent))
            if all(_separated((x, y), (o.x, o.y), gap) for o in objs):
                break
        else:
            raise GenerationFailure(f"could not place {node} after {MAX_PLACEMENT_ATTEMPTS} attempts")
        objs.append(PlacedObject(node, x, y, size, support.node if support is not None else None))
    return objs


def derive_relations(objs: list[PlacedObject], cfg: GenConfig) -> SceneGraph:
    """Read relations off the layout, thin them to ``density``, mix phrasings."""
    rng = _rng(cfg, 1)
    rels = set(cfg.schema.relation_set)
    support_rels = set(cfg.schema.support_relations)

    edges: list[Edge] = []
    for a in objs:
        for b in objs:
            if a is b:
                continue
            found = []
            if a.x - b.x >= cfg.margin:
                found.append("right")
            if b.y - a.y >= cfg.margin:
                found.append("front")
            if a.size >= SIZE_RATIO * b.size:
                found.append("bigger_than")
            if b.size >= SIZE_RATIO * a.size:
                found.append("smaller_than")
            if a.support_of == b.node:
                found.append("standing_on")
            edges.extend(Edge(a.node, b.node, r) for r in found if r in rels)

    kept = [e for e in edges if e.relation in support_rels or rng.random() < cfg.density]

    spatial = [i for i, e in enumerate(kept) if e.relation in ("right", "front")]
    inverse = {"right": "left", "front": "behind"}
    if spatial:
        flip = rng.choice(len(spatial), size=len(spatial) // 2, replace=False)
        for k in sorted(int(i) for i in flip):
            e = kept[spatial[k]]
            if inverse[e.relation] in rels:
                kept[spatial[k]] = Edge(e.dst, e.src, inverse[e.relation])
    return SceneGraph(tuple(o.node for o in objs), tuple(kept), cfg.schema.schema_id)


def generate_scene(cfg: GenConfig) -> tuple[list[PlacedObject], SceneGraph]:
    objs = place_objects(cfg)
    g = derive_relations(objs, cfg)
    if not is_spatially_consistent(g):
        # unreachable for a strict coordinate order; guards oracle regressions
        raise GenerationFailure("geometric oracle produced a contradictory graph")
    return objs, g


def generate_corpus(count: int, seed: int, **cfg_kwargs) -> list[SceneGraph]:
    """``count`` scenes; scene ``i`` is seeded with ``(seed, i)``."""
    out = []
    for i in range(count):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        out.append(generate_scene(GenConfig(seed=scene_seed, **cfg_kwargs))[1])
    return out


def load_triplets(
    text: bytes | str,
    schema: Schema = DEFAULT_SCHEMA,
    max_instances: int = MAX_INSTANCES,
) -> SceneGraph:
    """Parse ``<class>_<i> <class>_<i> <relation>`` lines.

    A line holding a single node name declares that node. Node order is the
    order of first appearance, whether by declaration or as an endpoint.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(0, f"not UTF-8: {exc}") from None

    def node(token: str, lineno: int) -> NodeRef:
        try:
            ref = NodeRef.parse(token)
        except ValueError:
            raise ParseError(lineno, f"malformed node {token!r}") from None
        if ref.instance_index >= max_instances:
            raise ParseError(lineno, f"instance index {ref.instance_index} >= {max_instances}")
        return ref

    order: dict[NodeRef, None] = {}
    edges: dict[Edge, None] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) == 1:
            order.setdefault(node(fields[0], lineno))
            continue
        if len(fields) != 3:
            raise ParseError(lineno, f"expected 3 fields, got {len(fields)}")
        src, dst = node(fields[0], lineno), node(fields[1], lineno)
        rel = fields[2]
        if rel not in schema.relation_set:
            raise ParseError(lineno, f"unknown relation {rel!r}")
        if src == dst:
            raise ParseError(lineno, f"self-loop on {src}")
        e = Edge(src, dst, rel)
        if e in edges:
            raise ParseError(lineno, f"duplicate triplet {e}")
        edges[e] = None
        order.setdefault(src)
        order.setdefault(dst)
    return SceneGraph(tuple(order), tuple(edges), schema.schema_id)


def _mention_order(g: SceneGraph) -> list[NodeRef]:
    order = dict.fromkeys(n for e in g.edges for n in (e.src, e.dst))
    return list(order)


def save_triplets(g: SceneGraph) -> bytes:
    buf = io.StringIO()
    mentioned = _mention_order(g)
    isolated = [n for n in g.nodes if n not in set(mentioned)]
    canonical = list(g.nodes) == mentioned + isolated
    if not canonical:
        for n in g.nodes:
            buf.write(f"{n.name}\n")
    for e in g.edges:
        buf.write(f"{e.src.name} {e.dst.name} {e.relation}\n")
    if canonical:
        for n in isolated:
            buf.write(f"{n.name}\n")
    return buf.getvalue().encode("utf-8")


def shuffle_augment(g: SceneGraph, copies: int, seed: int) -> list[SceneGraph]:
    if copies < 0:
        raise ValueError("copies must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(copies):
        perm = rng.permutation(len(g.edges))
        out.append(g.replace(edges=tuple(g.edges[int(i)] for i in perm)))
    return out


def to_dot(g: SceneGraph) -> bytes:
    lines = ["digraph {"]
    for n in g.nodes:
        lines.append(f'  "{n.name}";')
    for e in g.edges:
        lines.append(f'  "{e.src.name}" -> "{e.dst.name}" [label="{e.relation}"];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")
