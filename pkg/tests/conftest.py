import itertools

import pytest
from hypothesis import strategies as st

from scenestitch.scenegraph import DEFAULT_RELATIONS, DEFAULT_SCHEMA, Edge, NodeRef, SceneGraph


def N(name: str) -> NodeRef:
    return NodeRef.parse(name)


def E(src: str, dst: str, rel: str) -> Edge:
    return Edge(N(src), N(dst), rel)


def G(*edges, nodes=()) -> SceneGraph:
    return SceneGraph.from_edges([E(*e) for e in edges], [N(n) for n in nodes])


node_refs = st.builds(
    NodeRef,
    st.sampled_from(DEFAULT_SCHEMA.class_set),
    st.integers(min_value=0, max_value=15),
)


@st.composite
def scene_graphs(draw, max_nodes=6, max_edges=20, relations=DEFAULT_RELATIONS):
    nodes = draw(st.lists(node_refs, min_size=0, max_size=max_nodes, unique=True))
    pairs = [(a, b) for a, b in itertools.permutations(nodes, 2)]
    triples = [(a, b, r) for a, b in pairs for r in relations]
    chosen = draw(st.lists(st.sampled_from(triples), max_size=max_edges, unique=True)) if triples else []
    edges = [Edge(a, b, r) for a, b, r in chosen]
    return SceneGraph(tuple(nodes), tuple(edges))


def canonical(g: SceneGraph) -> SceneGraph:
    """Same edges, nodes in first-mention order (what the token stream preserves)."""
    return SceneGraph.from_edges(g.edges, schema_id=g.schema_id)


@pytest.fixture
def vocab():
    from scenestitch.tokenizer import build_vocab

    return build_vocab(DEFAULT_SCHEMA)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
