"""Spatial normalization and directed-cycle detection.

A scene graph is spatially contradictory when, after rewriting ``left`` and
``behind`` edges as their ``right`` / ``front`` inverses, either of those two
relation families contains a directed cycle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from .errors import SchemaMissingInverse
from .scenegraph import Edge, NodeRef, SceneGraph

SPATIAL_FAMILIES = ("right", "front")
# relation rewritten -> canonical relation it becomes (with swapped endpoints)
_REWRITES = {"left": "right", "behind": "front"}
_SIZE_REWRITES = {"smaller_than": "bigger_than"}


@dataclass(frozen=True)
class ConsistencyReport:
    right_cycle_found: bool = False
    front_cycle_found: bool = False
    cycles: tuple[tuple[NodeRef, ...], ...] = ()
    checked_families: tuple[str, ...] = ()
    # family of each entry in ``cycles``
    cycle_families: tuple[str, ...] = field(default=(), compare=False)

    @property
    def consistent(self) -> bool:
        return not self.cycles

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "right_cycle_found": self.right_cycle_found,
            "front_cycle_found": self.front_cycle_found,
            "checked_families": list(self.checked_families),
            "cycles": [
                {"family": fam, "walk": [n.name for n in walk]}
                for fam, walk in zip(self.cycle_families, self.cycles)
            ],
        }

    def merge(self, other: "ConsistencyReport") -> "ConsistencyReport":
        return ConsistencyReport(
            self.right_cycle_found or other.right_cycle_found,
            self.front_cycle_found or other.front_cycle_found,
            self.cycles + other.cycles,
            self.checked_families + other.checked_families,
            self.cycle_families + other.cycle_families,
        )


def _rewrites_for(g: SceneGraph, include_size: bool) -> dict[str, str]:
    schema = g.schema
    rewrites = dict(_REWRITES)
    if include_size:
        rewrites.update(_SIZE_REWRITES)
    for rel, canon in rewrites.items():
        if rel in schema.relation_set and schema.inverse_map.get(rel) != canon:
            raise SchemaMissingInverse(f"schema {schema.schema_id!r} declares no inverse {rel}->{canon}")
    return rewrites


def normalize_with_origin(g: SceneGraph, include_size: bool = False) -> tuple[SceneGraph, dict[Edge, list[Edge]]]:
    """Normalize and also report which original edges produced each output edge."""
    rewrites = _rewrites_for(g, include_size)
    origin: dict[Edge, list[Edge]] = {}
    for e in g.edges:
        canon = rewrites.get(e.relation)
        ne = Edge(e.dst, e.src, canon) if canon else e
        origin.setdefault(ne, []).append(e)
    return g.replace(edges=tuple(origin)), origin


def normalize_spatial(g: SceneGraph, include_size: bool = False) -> SceneGraph:
    return normalize_with_origin(g, include_size)[0]


def find_cycle(
    vertices: Iterable[Hashable],
    successors: Callable[[Hashable], Sequence[Hashable]] | Mapping[Hashable, Sequence[Hashable]],
) -> list | None:
    """Depth-first search with a visited set and a recursion stack.

    Returns a closed walk ``[v0, v1, ..., v0]`` for the first cycle found, or
    ``None``. The recursion is unrolled onto an explicit stack of iterators so
    deep chains cannot hit the interpreter's recursion limit.
    """
    succ = successors.get if isinstance(successors, Mapping) else successors
    visited = set()
    for root in vertices:
        if root in visited:
            continue
        visited.add(root)
        path = [root]
        on_stack = {root: 0}
        iters = [iter(succ(root) or ())]
        while iters:
            for w in iters[-1]:
                if w in on_stack:
                    return path[on_stack[w]:] + [w]
                if w not in visited:
                    visited.add(w)
                    on_stack[w] = len(path)
                    path.append(w)
                    iters.append(iter(succ(w) or ()))
                    break
            else:
                iters.pop()
                del on_stack[path.pop()]
    return None


def detect_cycle(g: SceneGraph, family: str) -> ConsistencyReport:
    adj: dict[NodeRef, list[NodeRef]] = {}
    for e in g.edges:
        if e.relation == family:
            adj.setdefault(e.src, []).append(e.dst)
    walk = find_cycle(g.nodes, adj)
    cycles = (tuple(walk),) if walk else ()
    return ConsistencyReport(
        right_cycle_found=bool(walk) and family == "right",
        front_cycle_found=bool(walk) and family == "front",
        cycles=cycles,
        checked_families=(family,),
        cycle_families=(family,) * len(cycles),
    )


def check(g: SceneGraph, include_size: bool = False) -> ConsistencyReport:
    """Normalize, then cycle-check every spatial family (and sizes when asked)."""
    ng = normalize_spatial(g, include_size)
    families = SPATIAL_FAMILIES + (("bigger_than",) if include_size else ())
    report = ConsistencyReport()
    for fam in families:
        report = report.merge(detect_cycle(ng, fam))
    return report


def is_spatially_consistent(g: SceneGraph) -> bool:
    return check(g).consistent
