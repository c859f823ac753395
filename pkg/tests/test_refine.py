import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphalign.aligner import GraphAligner
from graphalign.embeddings import EmbeddingTable
from graphalign.errors import EmptyGraph, NonFiniteValue, ProviderUnavailable, ScoreLengthMismatch
from graphalign.graph import TextualGraph, linearize, neighbors
from graphalign.llm import ChatGateway
from graphalign.refine import (
    GenerationBundle,
    PrunedSubgraph,
    SeedPruner,
    count_tokens,
    generate_answer,
    make_bundle,
    prune,
)

from conftest import NOVEL_ANSWER, NOVEL_QUESTION, path_graph, random_connected_graph

DIM = 6


def _table(g, rng):
    return EmbeddingTable(DIM, {v: rng.standard_normal(DIM) for v in g.nodes},
                          {i: rng.standard_normal(DIM) for i in g.edge_origin})


def _model():
    return GraphAligner(hidden_dim=8, n_layers=2, target_dim=5).initialize(DIM)


def test_prune_path_example():
    g = path_graph(4)  # a-b-c-d as 0-1-2-3
    p = prune(g, [0.7, 0.1, 0.1, 0.1], 1)
    assert p.seeds == [0]
    assert p.graph.node_ids == [0, 1] and [(s, d) for s, _, d in p.graph.edges] == [(0, 1)]


def test_prune_identity_and_ties():
    g = path_graph(5)
    p = prune(g, np.full(5, 0.2), 9)
    assert p.graph == g and p.seeds == [0, 1, 2, 3, 4]
    assert prune(g, np.full(5, 0.2), 2).seeds == [0, 1]


def test_prune_errors_and_default():
    with pytest.raises(ScoreLengthMismatch):
        prune(path_graph(3), [1.0, 0.0], 1)
    with pytest.raises(ValueError):
        prune(path_graph(3), [1.0, 0.0, 0.0], 0)
    assert SeedPruner().get_params() == {"n_seed": 25}


def test_seed_pruner_transform(rng):
    g = random_connected_graph(rng, 7, 2)
    s = rng.dirichlet(np.ones(7))
    assert SeedPruner(2).fit_transform([(g, s)])[0] == prune(g, s, 2)


@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_seed_monotonicity_and_coverage(seed, a, b):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, 12, 3)
    scores = rng.dirichlet(np.ones(12))
    small, large = prune(g, scores, min(a, b)), prune(g, scores, max(a, b))
    assert set(small.graph.nodes) <= set(large.graph.nodes) <= set(g.nodes)
    assert len(small.seeds) == min(a, b, 12)
    assert count_tokens(linearize(small.graph)) <= count_tokens(linearize(large.graph))
    for v in small.graph.nodes:
        assert v in small.seeds or any(u in small.seeds for u in neighbors(g, v))


def test_count_tokens_examples():
    assert count_tokens("") == 0
    assert count_tokens("harry potter, 1997") == 4
    assert count_tokens("a...b ?!") == 4
    assert count_tokens("anything", tokenizer=lambda t: ["x", "y"]) == 2
    assert count_tokens("anything", tokenizer=lambda t: 9) == 9


@given(st.text(), st.text())
def test_count_tokens_concat_monotone(a, b):
    assert count_tokens(a + b) >= max(count_tokens(a), count_tokens(b))


def test_make_bundle_shape_purity_and_round_trip(rng):
    g = random_connected_graph(rng, 6, 1)
    table, model = _table(g, rng), _model()
    pruned = prune(g, rng.dirichlet(np.ones(6)), 2)
    b1 = make_bundle(model, pruned, table, "who?")
    b2 = make_bundle(model, pruned, table, "who?")
    assert b1.graph_token.shape == (5,)
    assert b1.token_count == count_tokens(b1.prompt)
    assert b1.linearized_graph in b1.prompt and "who?" in b1.prompt
    assert np.array_equal(b1.graph_token, b2.graph_token) and b1.prompt == b2.prompt
    back = GenerationBundle.from_json(b1.to_json())
    assert back.prompt == b1.prompt and back.token_count == b1.token_count
    assert back.linearized_graph == b1.linearized_graph
    assert np.array_equal(back.graph_token, b1.graph_token)
    with pytest.raises(EmptyGraph):
        make_bundle(model, PrunedSubgraph([], TextualGraph({})), table, "q")


def test_bundle_rejects_bad_payloads():
    with pytest.raises(NonFiniteValue):
        GenerationBundle("p", [np.nan], "", 1)
    d = GenerationBundle("p", [1.0, 2.0], "", 1).to_dict()
    d["d_t"] = 3
    with pytest.raises(ValueError):
        GenerationBundle.from_dict(d)


def test_generate_first_novel_from_fixture(novel_graph, novel_llm_dir, rng):
    pruned = prune(novel_graph, np.full(len(novel_graph), 1.0 / len(novel_graph)), len(novel_graph))
    bundle = make_bundle(_model(), pruned, _table(novel_graph, rng), NOVEL_QUESTION)
    gw = ChatGateway(fixture_dir=novel_llm_dir)
    answer = generate_answer(bundle, gw)
    assert NOVEL_ANSWER in answer.lower()
    assert generate_answer(bundle, gw) == answer


def test_gateway_down_keeps_bundle(rng):
    g = path_graph(3)
    bundle = make_bundle(_model(), prune(g, [0.5, 0.3, 0.2], 1), _table(g, rng), "q")

    def refuse(request):
        raise httpx.ConnectError("down", request=request)

    gw = ChatGateway("http://chat.test", transport=httpx.MockTransport(refuse), sleep=lambda s: None)
    with pytest.raises(ProviderUnavailable) as info:
        generate_answer(bundle, gw)
    assert info.value.bundle is bundle
