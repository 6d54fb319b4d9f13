"""Ranking metrics, held-out edge evaluation and the cycle-rate benchmark."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tokenizer as tok
from .consistency import check, find_cycle, normalize_with_origin, SPATIAL_FAMILIES
from .corpus import generate_scene, GenConfig
from .errors import EmptyInput
from .manipulator import OPPOSITE, StitchPolicy, change_edge, naive_change_edge
from .model import SceneTransformer, predict_relation_distributions
from .scenegraph import Edge, NodeRef, SceneGraph
from .tokenizer import Vocabulary

HIT_KS = (1, 3, 10)
MAX_QUERIES_PER_SCENE = 20


def _nonempty(ranks) -> np.ndarray:
    arr = np.asarray(list(ranks), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("no ranks to aggregate")
    return arr


def mean_rank(ranks: Sequence[int]) -> float:
    return float(math.fsum(_nonempty(ranks)) / len(ranks))


def mean_reciprocal_rank(ranks: Sequence[int]) -> float:
    arr = _nonempty(ranks)
    return float(math.fsum(1.0 / arr) / arr.size)


def hit_at_k(ranks: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    arr = _nonempty(ranks)
    return float(np.count_nonzero(arr <= k) / arr.size)


def rank_of(dist: np.ndarray, truth_index: int) -> int:
    """1-based rank; ties go to the lower index first."""
    p = dist[truth_index]
    higher = int(np.count_nonzero(dist > p))
    tied_before = int(np.count_nonzero(dist[:truth_index] == p))
    return 1 + higher + tied_before


@dataclass(frozen=True)
class RankOutcome:
    query: tuple[NodeRef, NodeRef, str]
    rank: int


@dataclass
class BenchReport:
    mr: Optional[float] = None
    mrr: Optional[float] = None
    hit_at: dict[int, float] = field(default_factory=dict)
    n_queries: int = 0
    cycle_rate_right: Optional[float] = None
    cycle_rate_front: Optional[float] = None
    cycle_rate_total: Optional[float] = None
    n_graphs: int = 0
    method: Optional[str] = None
    # stitch only: rate before any resampling
    first_attempt_cycle_rate: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "mr": self.mr,
            "mrr": self.mrr,
            "hit_at": {str(k): v for k, v in sorted(self.hit_at.items())},
            "n_queries": self.n_queries,
            "cycle_rate_right": self.cycle_rate_right,
            "cycle_rate_front": self.cycle_rate_front,
            "cycle_rate_total": self.cycle_rate_total,
            "n_graphs": self.n_graphs,
            "method": self.method,
            "first_attempt_cycle_rate": self.first_attempt_cycle_rate,
        }


def ranking_report(ranks: Sequence[int], ks: Sequence[int] = HIT_KS) -> BenchReport:
    return BenchReport(
        mr=mean_rank(ranks),
        mrr=mean_reciprocal_rank(ranks),
        hit_at={k: hit_at_k(ranks, k) for k in ks},
        n_queries=len(ranks),
    )


def rank_query(
    model: SceneTransformer,
    vocab: Vocabulary,
    context: SceneGraph,
    query: tuple[NodeRef, NodeRef],
    truth: str,
) -> RankOutcome:
    return rank_queries(model, vocab, [(context, query, truth)])[0]


def rank_queries(model, vocab, items) -> list[RankOutcome]:
    requests = [
        (tok.encode_edges(vocab, ctx.edges), tok.build_query(vocab, q[0], q[1])) for ctx, q, _ in items
    ]
    dists = predict_relation_distributions(model, vocab, requests)
    out = []
    for (ctx, q, truth), dist in zip(items, dists):
        truth_index = vocab.relation_id(truth) - vocab.relation_range.start
        out.append(RankOutcome((q[0], q[1], truth), rank_of(dist, truth_index)))
    return out


def heldout_queries(
    scenes: Sequence[SceneGraph],
    holdout_fraction: float = 1.0,
    seed: int = 0,
    cap: int = MAX_QUERIES_PER_SCENE,
) -> list[tuple[SceneGraph, tuple[NodeRef, NodeRef], str]]:
    """For each selected edge: (graph without that edge, (src, dst), relation)."""
    if not 0 < holdout_fraction <= 1:
        raise ValueError("holdout_fraction must lie in (0, 1]")
    items = []
    for i, g in enumerate(scenes):
        n = len(g.edges)
        take = min(cap, math.ceil(holdout_fraction * n))
        if take == 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        picked = sorted(int(j) for j in rng.choice(n, size=take, replace=False))
        for j in picked:
            e = g.edges[j]
            ctx = g.replace(edges=g.edges[:j] + g.edges[j + 1:])
            items.append((ctx, (e.src, e.dst), e.relation))
    return items


def run_edge_eval(
    model: SceneTransformer,
    vocab: Vocabulary,
    scenes: Sequence[SceneGraph],
    holdout_fraction: float = 1.0,
    seed: int = 0,
) -> tuple[BenchReport, list[RankOutcome]]:
    items = heldout_queries(scenes, holdout_fraction, seed)
    outcomes = rank_queries(model, vocab, items)
    report = ranking_report([o.rank for o in outcomes])
    return report, outcomes


def flip_command(g: SceneGraph, rng: np.random.Generator) -> Optional[Edge]:
    """Pick a spatial edge uniformly and reverse its relation within its family."""
    spatial = [e for e in g.edges if e.relation in OPPOSITE]
    if not spatial:
        return None
    e = spatial[int(rng.integers(len(spatial)))]
    return Edge(e.src, e.dst, OPPOSITE[e.relation])


def implied_edges(g: SceneGraph) -> list[Edge]:
    """Spatial edges whose endpoints are also joined by a longer path in the same family.

    Reversing one of these in place always closes a cycle.
    """
    norm, origin = normalize_with_origin(g)
    out = []
    for fam in SPATIAL_FAMILIES:
        fam_edges = [e for e in norm.edges if e.relation == fam]
        for e in fam_edges:
            adj: dict[NodeRef, list[NodeRef]] = {}
            for f in fam_edges:
                if f != e:
                    adj.setdefault(f.src, []).append(f.dst)
            # a path src -> dst plus the reversed edge dst -> src is a cycle
            adj.setdefault(e.dst, []).append(e.src)
            if find_cycle(norm.nodes, adj):
                out.extend(origin[e])
    return [e for e in g.edges if e in set(out)]


def flip_implied_command(g: SceneGraph, rng: np.random.Generator) -> Optional[Edge]:
    implied = implied_edges(g)
    if not implied:
        return None
    e = implied[int(rng.integers(len(implied)))]
    return Edge(e.src, e.dst, OPPOSITE[e.relation])


def cycle_benchmark_tasks(
    n_tasks: int,
    seed: int,
    node_count_range: tuple[int, int] = (3, 5),
    adversarial: bool = False,
    **gen_kwargs,
) -> list[tuple[SceneGraph, Edge]]:
    """Seeded (scene, command) pairs; scenes without an eligible edge are skipped.

    The standard set flips a uniformly chosen spatial edge. The adversarial set
    only flips edges implied by a longer chain, the closure of a triangle.
    """
    pick = flip_implied_command if adversarial else flip_command
    tasks = []
    i = 0
    while len(tasks) < n_tasks:
        ss = np.random.SeedSequence([seed, i])
        scene_seed = int(ss.generate_state(1)[0])
        _, g = generate_scene(GenConfig(seed=scene_seed, node_count_range=node_count_range, **gen_kwargs))
        cmd = pick(g, np.random.default_rng(ss.spawn(1)[0]))
        if cmd is not None:
            tasks.append((g, cmd))
        i += 1
    return tasks


def run_cycle_bench(
    model: Optional[SceneTransformer],
    vocab: Optional[Vocabulary],
    scenes: Sequence[SceneGraph],
    commands: Sequence[Edge],
    method: str = "stitch",
    policy: StitchPolicy = StitchPolicy(),
) -> BenchReport:
    """Apply each command with ``method`` and measure right/front cycle rates."""
    if len(scenes) != len(commands):
        raise ValueError("one command per scene required")
    if not scenes:
        raise EmptyInput("no scenes to benchmark")
    right = front = either = first = 0
    for i, (g, cmd) in enumerate(zip(scenes, commands)):
        if method == "naive":
            out = naive_change_edge(g, cmd)
        elif method == "stitch":
            sampler = type(policy.sampler)(policy.sampler.top_p, policy.sampler.temperature, policy.sampler.seed + i)
            task_policy = StitchPolicy(
                policy.pair_order, policy.edge_acceptance, policy.k, policy.max_resample_attempts, policy.repair, sampler
            )
            res = change_edge(model, vocab, g, cmd, task_policy)
            out = res.graph
            first += res.attempts_used > 1 or not res.consistent
        else:
            raise ValueError(f"unknown method {method!r}")
        rep = check(out)
        right += rep.right_cycle_found
        front += rep.front_cycle_found
        either += not rep.consistent
    n = len(scenes)
    return BenchReport(
        cycle_rate_right=right / n,
        cycle_rate_front=front / n,
        cycle_rate_total=either / n,
        n_graphs=n,
        method=method,
        first_attempt_cycle_rate=first / n if method == "stitch" else None,
    )
