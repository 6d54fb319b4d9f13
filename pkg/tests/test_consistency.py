import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import E, G, N, scene_graphs
from oracles import has_cycle_brute, walk_is_cycle
from scenestitch import consistency as cons
from scenestitch.errors import SchemaMissingInverse
from scenestitch.scenegraph import SceneGraph, Schema, induced_subgraph, register_schema


def test_normalize_left_becomes_right():
    g = G(("sofa_1", "table_1", "left"))
    assert cons.normalize_spatial(g).edges == (E("table_1", "sofa_1", "right"),)


def test_normalize_behind_becomes_front():
    g = G(("sofa_1", "table_1", "behind"))
    assert cons.normalize_spatial(g).edges == (E("table_1", "sofa_1", "front"),)


def test_normalize_leaves_support_alone():
    g = G(("a_0", "b_0", "standing_on"))
    assert cons.normalize_spatial(g) == g


def test_normalize_collapses_duplicates():
    g = G(("a_0", "b_0", "left"), ("b_0", "a_0", "right"))
    assert cons.normalize_spatial(g).edges == (E("b_0", "a_0", "right"),)


def test_normalize_requires_inverse():
    register_schema(Schema("no-inverse", ("a",), ("left", "right", "front", "behind")))
    g = SceneGraph((N("a_0"), N("a_1")), (E("a_0", "a_1", "left"),), "no-inverse")
    with pytest.raises(SchemaMissingInverse):
        cons.normalize_spatial(g)


def test_detect_three_cycle_with_witness():
    g = G(("a_0", "b_0", "right"), ("b_0", "c_0", "right"), ("c_0", "a_0", "right"))
    rep = cons.detect_cycle(g, "right")
    assert rep.right_cycle_found and not rep.front_cycle_found
    assert rep.cycles == ((N("a_0"), N("b_0"), N("c_0"), N("a_0")),)


def test_detect_chain_has_no_cycle():
    g = G(("a_0", "b_0", "right"), ("b_0", "c_0", "right"))
    rep = cons.detect_cycle(g, "right")
    assert not rep.right_cycle_found and rep.cycles == ()


def test_detect_two_cycle_after_normalization():
    g = cons.normalize_spatial(G(("a_0", "b_0", "left"), ("a_0", "b_0", "right")))
    assert set(g.edges) == {E("b_0", "a_0", "right"), E("a_0", "b_0", "right")}
    rep = cons.detect_cycle(g, "right")
    assert rep.right_cycle_found and len(rep.cycles[0]) == 3


def test_figure_one_conflict_is_inconsistent():
    # chair left of bed, table left of chair, bed left of table
    g = G(("chair_1", "bed_1", "left"), ("table_1", "chair_1", "left"), ("bed_1", "table_1", "left"))
    assert not cons.is_spatially_consistent(g)
    assert cons.check(g).right_cycle_found


def test_empty_graph_is_consistent():
    assert cons.is_spatially_consistent(SceneGraph())


def test_front_family_detected_separately():
    g = G(("a_0", "b_0", "front"), ("b_0", "a_0", "front"), ("a_0", "b_0", "right"))
    rep = cons.check(g)
    assert rep.front_cycle_found and not rep.right_cycle_found
    assert rep.to_dict()["cycles"][0]["family"] == "front"


def test_size_family_only_when_flagged():
    g = G(("a_0", "b_0", "bigger_than"), ("a_0", "b_0", "smaller_than"))
    assert cons.check(g).consistent
    assert not cons.check(g, include_size=True).consistent


def _random_dag(rng, n, rels=("right", "front")):
    nodes = [f"obj_{i}" for i in range(n)]
    edges = []
    for rel in rels:
        order = nodes[:]
        rng.shuffle(order)
        for i, j in itertools.combinations(range(n), 2):
            if rng.random() < 0.5:
                # phrase some edges as inverses
                if rng.random() < 0.5:
                    edges.append((order[i], order[j], rel))
                else:
                    edges.append((order[j], order[i], {"right": "left", "front": "behind"}[rel]))
    return G(*edges, nodes=nodes)


def test_random_dags_are_consistent_per_brute_force():
    rng = random.Random(11)
    for _ in range(300):
        g = _random_dag(rng, rng.randint(1, 6))
        ng = cons.normalize_spatial(g)
        for fam in ("right", "front"):
            pairs = [(e.src, e.dst) for e in ng.edges if e.relation == fam]
            assert not has_cycle_brute(ng.nodes, pairs)
        assert cons.is_spatially_consistent(g)


def test_find_cycle_deep_chain_does_not_recurse():
    n = 50_000
    succ = {i: [i + 1] for i in range(n)}
    assert cons.find_cycle(range(n + 1), succ) is None
    succ[n] = [0]
    walk = cons.find_cycle(range(n + 1), succ)
    assert walk[0] == walk[-1] and len(walk) == n + 2


def test_find_cycle_matches_brute_force_on_random_graphs():
    rng = random.Random(5)
    for _ in range(2000):
        n = rng.randint(1, 6)
        p = rng.random()
        edges = [(a, b) for a in range(n) for b in range(n) if a != b and rng.random() < p]
        succ = {}
        for a, b in edges:
            succ.setdefault(a, []).append(b)
        walk = cons.find_cycle(range(n), succ)
        assert (walk is not None) == has_cycle_brute(range(n), edges)
        if walk:
            assert walk_is_cycle(walk, edges)


@settings(max_examples=200)
@given(scene_graphs())
def test_normalize_is_idempotent(g):
    once = cons.normalize_spatial(g)
    assert cons.normalize_spatial(once) == once
    assert not any(e.relation in ("left", "behind") for e in once.edges)


def _derivable(g, fam, inv):
    facts = set()
    for e in g.edges:
        if e.relation == fam:
            facts.add((e.src, e.dst))
        elif e.relation == inv:
            facts.add((e.dst, e.src))
    return facts


@settings(max_examples=200)
@given(scene_graphs())
def test_normalize_preserves_spatial_meaning(g):
    ng = cons.normalize_spatial(g)
    for fam, inv in (("right", "left"), ("front", "behind")):
        assert _derivable(g, fam, inv) == _derivable(ng, fam, inv)


@settings(max_examples=200)
@given(scene_graphs(), st.data())
def test_consistency_monotone_under_edge_removal(g, data):
    if not cons.is_spatially_consistent(g) or not g.edges:
        return
    i = data.draw(st.integers(0, len(g.edges) - 1))
    assert cons.is_spatially_consistent(g.replace(edges=g.edges[:i] + g.edges[i + 1:]))


@settings(max_examples=200)
@given(scene_graphs(), st.data())
def test_induced_subgraphs_of_consistent_graphs_are_consistent(g, data):
    if not cons.is_spatially_consistent(g):
        return
    keep = data.draw(st.lists(st.sampled_from(g.nodes), unique=True)) if g.nodes else []
    assert cons.is_spatially_consistent(induced_subgraph(g, keep))
