"""Node addition, node removal and edge change by next-relationship prediction.

Edge change is cut-and-stitch: drop every edge touching the node of interest,
pin the commanded edge, then query the model for the node's relation to each
remaining node, feeding every prediction back into the context.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import scenegraph as sg
from . import tokenizer as tok
from .consistency import find_cycle, is_spatially_consistent, normalize_with_origin, SPATIAL_FAMILIES
from .errors import NoSuchEdge, UnknownNode
from .model import (
    SamplerConfig,
    SceneTransformer,
    predict_relation_distribution,
    predict_relation_distributions,
    sample_top_p,
)
from .scenegraph import Edge, NodeRef, SceneGraph
from .tokenizer import Vocabulary

CONTEXT_ORDER = "context_order"
CONFIDENCE_GREEDY = "confidence_greedy"
ACCEPT_ALL = "all"
ACCEPT_TOP_K = "top_k"

OPPOSITE = {"left": "right", "right": "left", "front": "behind", "behind": "front"}


@dataclass(frozen=True)
class StitchPolicy:
    pair_order: str = CONTEXT_ORDER
    edge_acceptance: str = ACCEPT_ALL
    k: int = 4
    max_resample_attempts: int = 8
    repair: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.pair_order not in (CONTEXT_ORDER, CONFIDENCE_GREEDY):
            raise ValueError(f"unknown pair order {self.pair_order!r}")
        if self.edge_acceptance not in (ACCEPT_ALL, ACCEPT_TOP_K):
            raise ValueError(f"unknown edge acceptance {self.edge_acceptance!r}")
        if self.edge_acceptance == ACCEPT_TOP_K and self.k < 1:
            raise ValueError("top_k acceptance needs k >= 1")
        if self.max_resample_attempts < 0:
            raise ValueError("max_resample_attempts must be non-negative")


@dataclass(frozen=True)
class ManipulationResult:
    graph: SceneGraph
    predicted_edges: tuple[tuple[Edge, float], ...] = ()
    attempts_used: int = 1
    repaired_edges_dropped: tuple[Edge, ...] = ()
    consistent: bool = True

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "attempts_used": self.attempts_used,
            "predicted_edges": [
                {"src": e.src.name, "dst": e.dst.name, "rel": e.relation, "confidence": c}
                for e, c in self.predicted_edges
            ],
            "repaired_edges_dropped": [
                {"src": e.src.name, "dst": e.dst.name, "rel": e.relation} for e in self.repaired_edges_dropped
            ],
            "graph": sg.to_json(self.graph),
        }


def _derived_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def stitch(
    model: SceneTransformer,
    vocab: Vocabulary,
    g: SceneGraph,
    target: NodeRef,
    pinned: Sequence[Edge],
    policy: StitchPolicy = StitchPolicy(),
    seed: int | None = None,
) -> ManipulationResult:
    """Predict one relation from ``target`` to every other node not covered by ``pinned``."""
    if target not in g.nodes:
        raise UnknownNode(f"{target} is not a node of the graph")
    pinned = list(dict.fromkeys(pinned))
    for e in pinned:
        if target not in (e.src, e.dst):
            raise ValueError(f"pinned edge ({e}) does not touch {target}")
    stray = [e for e in sg.incident_edges(g, target) if e not in pinned]
    if stray:
        raise ValueError(f"{target} still has unpinned incident edges: {stray[0]}")

    pinned_set = set(pinned)
    base = [e for e in g.edges if e not in pinned_set] + pinned
    covered = {e.dst if e.src == target else e.src for e in pinned}
    remaining = [u for u in g.nodes if u != target and u not in covered]

    rng = np.random.default_rng(policy.sampler.seed if seed is None else seed)
    context = tok.encode_edges(vocab, base)
    relations = vocab.relations
    predictions: list[tuple[Edge, float]] = []

    while remaining:
        if policy.pair_order == CONFIDENCE_GREEDY:
            dists = predict_relation_distributions(
                model, vocab, [(context, tok.build_query(vocab, target, u)) for u in remaining]
            )
            best = max(range(len(remaining)), key=lambda i: (float(dists[i].max()), -i))
            u, dist = remaining.pop(best), dists[best]
        else:
            u = remaining.pop(0)
            dist = predict_relation_distribution(model, vocab, context, tok.build_query(vocab, target, u))
        idx = sample_top_p(dist, policy.sampler, rng)
        edge = Edge(target, u, relations[idx])
        predictions.append((edge, float(dist[idx])))
        context = context + tok.encode_triplet(vocab, (edge.src, edge.relation, edge.dst))

    if policy.edge_acceptance == ACCEPT_TOP_K:
        ranked = sorted(range(len(predictions)), key=lambda i: (-predictions[i][1], i))
        keep = set(ranked[: policy.k])
        accepted = [p for i, p in enumerate(predictions) if i in keep]
    else:
        accepted = predictions

    graph = g.replace(edges=tuple(base) + tuple(e for e, _ in accepted))
    return ManipulationResult(
        graph=graph,
        predicted_edges=tuple(accepted),
        attempts_used=1,
        consistent=is_spatially_consistent(graph),
    )


def add_node(
    model: SceneTransformer,
    vocab: Vocabulary,
    g: SceneGraph,
    v: NodeRef,
    policy: StitchPolicy = StitchPolicy(),
) -> ManipulationResult:
    return stitch(model, vocab, sg.add_node(g, v), v, [], policy)


def remove_node_op(g: SceneGraph, v: NodeRef) -> SceneGraph:
    return sg.remove_node(g, v)


def repair_cycles(
    g: SceneGraph,
    confidence: dict[Edge, float],
    pinned: Sequence[Edge] = (),
) -> tuple[SceneGraph, list[Edge]]:
    """Drop the least-confident non-pinned edge on a witness cycle until none remain.

    Edges absent from ``confidence`` are pre-existing and only go once no
    predicted edge is left on the cycle. A cycle always holds an
    eligible edge because a single pinned edge cannot close a cycle on its own.
    """
    pinned_set = set(pinned)
    dropped: list[Edge] = []
    while True:
        norm, origin = normalize_with_origin(g)
        walk = family = None
        for fam in SPATIAL_FAMILIES:
            adj: dict[NodeRef, list[NodeRef]] = {}
            for e in norm.edges:
                if e.relation == fam:
                    adj.setdefault(e.src, []).append(e.dst)
            walk = find_cycle(norm.nodes, adj)
            if walk:
                family = fam
                break
        if not walk:
            return g, dropped
        candidates = []
        for pos, (a, b) in enumerate(zip(walk, walk[1:])):
            sources = origin[Edge(a, b, family)]
            if pinned_set.intersection(sources):
                continue
            existing = any(e not in confidence for e in sources)
            score = max(confidence.get(e, 1.0) for e in sources)
            candidates.append((existing, score, pos, sources))
        if not candidates:
            raise RuntimeError("cycle made only of pinned edges")
        *_, sources = min(candidates, key=lambda c: c[:3])
        g = sg.remove_edges(g, sources)
        dropped.extend(sources)


def change_edge(
    model: SceneTransformer,
    vocab: Vocabulary,
    g: SceneGraph,
    new_edge: Edge,
    policy: StitchPolicy = StitchPolicy(),
) -> ManipulationResult:
    for n in (new_edge.src, new_edge.dst):
        if n not in g.nodes:
            raise UnknownNode(f"{n} is not a node of the graph")
    g.schema.check_relation(new_edge.relation)
    target = new_edge.src
    cut = sg.remove_edges(g, sg.incident_edges(g, target))
    seed = policy.sampler.seed

    result = None
    for attempt in range(policy.max_resample_attempts + 1):
        result = stitch(model, vocab, cut, target, [new_edge], policy, seed=_derived_seed(seed, attempt))
        result = ManipulationResult(result.graph, result.predicted_edges, attempt + 1, (), result.consistent)
        if result.consistent:
            return result
    if not policy.repair:
        return result

    confidence = {e: c for e, c in result.predicted_edges}
    repaired, dropped = repair_cycles(result.graph, confidence, [new_edge])
    kept = tuple((e, c) for e, c in result.predicted_edges if e in set(repaired.edges))
    return ManipulationResult(
        graph=repaired,
        predicted_edges=kept,
        attempts_used=result.attempts_used,
        repaired_edges_dropped=tuple(dropped),
        consistent=is_spatially_consistent(repaired),
    )


def naive_change_edge(g: SceneGraph, new_edge: Edge) -> SceneGraph:
    """Relabel the existing ``(src, dst)`` edge and touch nothing else."""
    for n in (new_edge.src, new_edge.dst):
        if n not in g.nodes:
            raise UnknownNode(f"{n} is not a node of the graph")
    pair = [i for i, e in enumerate(g.edges) if e.src == new_edge.src and e.dst == new_edge.dst]
    if not pair:
        raise NoSuchEdge(f"no edge from {new_edge.src} to {new_edge.dst}")
    family = {new_edge.relation, OPPOSITE.get(new_edge.relation, new_edge.relation)}
    same_family = [i for i in pair if g.edges[i].relation in family]
    slot = (same_family or pair)[0]
    edges = list(g.edges)
    if new_edge in edges and edges[slot] != new_edge:
        del edges[slot]
    else:
        edges[slot] = new_edge
    return g.replace(edges=tuple(edges))
