import pytest
from hypothesis import given, settings

from conftest import G, N, canonical, scene_graphs
from scenestitch import tokenizer as tok
from scenestitch.errors import ContextOverflow, FramingError, UnknownSymbol
from scenestitch.scenegraph import DEFAULT_SCHEMA, Edge, NodeRef, SceneGraph
from scenestitch.tokenizer import Role


def test_vocab_layout(vocab):
    assert len(vocab) == 6 + 10 + 16 + 7 == 39
    assert vocab.id("[PAD]") == 0
    assert [vocab.id(t) for t in tok.SPECIAL_TOKENS] == list(range(6))
    assert len(vocab.relation_range) == 7
    assert vocab.relations == DEFAULT_SCHEMA.relation_set
    assert list(vocab.classes) == sorted(DEFAULT_SCHEMA.class_set)


def test_vocab_file_round_trip(vocab):
    text = vocab.dumps()
    assert text.startswith("SGT-VOCAB v1")
    again = tok.Vocabulary.loads(text)
    assert again == vocab
    assert again.tokens == vocab.tokens


def test_encode_triplet(vocab):
    seq = tok.encode_triplet(vocab, (N("chair_1"), "right", N("desk_1")))
    words = [vocab.token(i) for i in seq.ids]
    assert words == ["[BOQ]", "chair", "<1>", "desk", "<1>", "[SEP]", "right", "[EOQ]"]
    assert list(seq.role_mask) == [
        Role.SPECIAL, Role.SUBJECT, Role.SUBJECT, Role.OBJECT, Role.OBJECT, Role.SPECIAL, Role.PREDICATE, Role.SPECIAL,
    ]


def test_encode_triplet_unknown_class(vocab):
    with pytest.raises(UnknownSymbol):
        tok.encode_triplet(vocab, (N("spaceship_1"), "right", N("desk_1")))


def test_encode_graph_lengths(vocab):
    g = G(("chair_1", "desk_1", "right"), ("lamp_1", "desk_1", "standing_on"))
    assert len(tok.encode_graph(vocab, g)) == 17
    assert tok.encode_graph(vocab, SceneGraph()).ids == (tok.EOS_ID,)
    padded = tok.encode_graph(vocab, g, context_length=32, pad=True)
    assert len(padded) == 32 and padded.ids[17:] == (tok.PAD_ID,) * 15


def test_encode_graph_overflow(vocab):
    edges = []
    for i in range(16):
        for j in range(16):
            if len(edges) < 128 and i != j:
                edges.append(Edge(NodeRef("chair", i), NodeRef("desk", j), "right"))
    g = SceneGraph.from_edges(edges)
    with pytest.raises(ContextOverflow):
        tok.encode_graph(vocab, g, context_length=1024)
    assert len(tok.encode_graph(vocab, g.replace(edges=g.edges[:127]), context_length=1024)) == 1017


def test_decode_eos_only(vocab):
    assert tok.decode_sequence(vocab, [tok.EOS_ID]) == SceneGraph()


def test_decode_truncated_quintuple(vocab):
    ids = [tok.BOQ_ID, vocab.class_id("chair"), vocab.instance_id(1), tok.SEP_ID, vocab.relation_id("right"), tok.EOQ_ID, tok.EOS_ID]
    with pytest.raises(FramingError) as info:
        tok.decode_sequence(vocab, ids)
    assert info.value.position == 3


def test_decode_missing_eos(vocab):
    seq = tok.encode_graph(vocab, G(("chair_1", "desk_1", "right")))
    with pytest.raises(FramingError):
        tok.decode_sequence(vocab, seq.ids[:-1])


def test_decode_ignores_trailing_pad(vocab):
    g = G(("chair_1", "desk_1", "right"))
    assert tok.decode_sequence(vocab, tok.encode_graph(vocab, g, 40, pad=True)) == g


def test_build_query(vocab):
    q = tok.build_query(vocab, N("wardrobe_1"), N("bed_1"))
    assert [vocab.token(i) for i in q.ids] == ["[BOQ]", "wardrobe", "<1>", "bed", "<1>", "[SEP]"]
    with pytest.raises(UnknownSymbol):
        tok.build_query(vocab, N("wardrobe_99"), N("bed_1"))


@settings(max_examples=300)
@given(scene_graphs(max_nodes=8, max_edges=30))
def test_encode_decode_bijection(g):
    vocab = tok.build_vocab(DEFAULT_SCHEMA)
    c = canonical(g)
    seq = tok.encode_graph(vocab, c)
    assert tok.decode_sequence(vocab, seq) == c
    preds = [i for i, r in enumerate(seq.role_mask) if r == Role.PREDICATE]
    assert preds == [8 * k + tok.PREDICATE_OFFSET for k in range(len(c.edges))]
