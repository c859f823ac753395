import json
import logging

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphalign.embeddings import (
    EmbeddingClient,
    EmbeddingTable,
    HashingEmbedder,
    cosine,
    cosine_rows,
    load_embeddings,
    save_embeddings,
    text_key,
)
from graphalign.errors import DimensionMismatch, FixtureMiss, MissingVector, NonFiniteValue, ProviderUnavailable
from graphalign.graph import TextualGraph


def _archive(path, dim, rows, node_ids, edge_ids=()):
    header = {"format": "graphalign-embeddings/1", "dim": dim, "n_nodes": len(node_ids),
              "n_edges": len(edge_ids), "node_ids": list(node_ids), "edge_indices": list(edge_ids)}
    path.write_bytes(json.dumps(header).encode() + b"\n" + np.asarray(rows, dtype="<f4").tobytes())


def test_short_row_is_dimension_mismatch(tmp_path):
    # Two rows declared at dim 4, but the second carries only 3 values.
    _archive(tmp_path / "e.bin", 4, [1, 2, 3, 4, 5, 6, 7], [0, 1])
    with pytest.raises(DimensionMismatch):
        load_embeddings(tmp_path / "e.bin")


def test_missing_node_vector(tmp_path):
    _archive(tmp_path / "e.bin", 2, [[1, 0], [0, 1]], [0, 1])
    g = TextualGraph({0: "a", 1: "b", 2: "c"})
    with pytest.raises(MissingVector, match="2"):
        load_embeddings(tmp_path / "e.bin", g)


def test_non_finite_archive(tmp_path):
    _archive(tmp_path / "e.bin", 2, [[1, np.nan]], [0])
    with pytest.raises(NonFiniteValue):
        load_embeddings(tmp_path / "e.bin")


def test_archive_round_trip_and_idempotent_load(tmp_path):
    g = TextualGraph({0: "a", 3: "b"}, ((0, "r", 3),))
    table = EmbeddingTable(3, {0: np.array([1.0, 2, 3]), 3: np.array([0.5, 0, -1])}, {0: np.array([0.25, 0, 0])})
    save_embeddings(tmp_path / "e.bin", table)
    first = load_embeddings(tmp_path / "e.bin", g)
    second = load_embeddings(tmp_path / "e.bin", g)
    for v in (0, 3):
        assert np.array_equal(first.node_vecs[v], second.node_vecs[v])
        assert np.array_equal(first.node_vecs[v], table.node_vecs[v])
    assert np.array_equal(first.edge_matrix([0]), [[0.25, 0, 0]])
    assert first.node_matrix([3, 0]).shape == (2, 3)


def test_cosine_examples(caplog):
    assert cosine([1, 0], [0, 1]) == 0
    assert cosine([2, 2], [1, 1]) == pytest.approx(1.0)
    assert cosine([1, 2], [2, 1]) == pytest.approx(0.8)
    with caplog.at_level(logging.WARNING):
        assert cosine([0, 0], [1, 1]) == 0.0
    assert "zero vector" in caplog.text
    with pytest.raises(DimensionMismatch):
        cosine([1, 2], [1, 2, 3])


vec = arrays(np.float64, 5, elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=150, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_properties(u, v, a):
    c = cosine(u, v)
    assert c == cosine(v, u)
    assert abs(c) <= 1 + 1e-12
    if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
        assert cosine(a * u, v) == pytest.approx(c, abs=1e-12)


def test_cosine_rows_matches_scalar(rng):
    m = rng.standard_normal((6, 4))
    m[2] = 0
    v = rng.standard_normal(4)
    np.testing.assert_allclose(cosine_rows(m, v), [cosine(r, v) for r in m], atol=1e-15)


def test_hashing_embedder_deterministic():
    e = HashingEmbedder(8)
    a, b = e(["Harry Potter", "harry potter"])
    assert np.array_equal(a, b)
    assert np.array_equal(HashingEmbedder(8)(["x y"])[0], e(["y x"])[0])


def _fixture(dirpath, text, vector):
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / f"{text_key(text)}.json").write_text(json.dumps({"text": text, "vector": vector}))


def test_embed_same_text_twice_is_cached(tmp_path):
    _fixture(tmp_path, "hello", [0.1, 0.2, 0.3])
    client = EmbeddingClient(fixture_dir=tmp_path)
    a = client.embed("hello")
    (tmp_path / f"{text_key('hello')}.json").unlink()
    b = client.embed("hello")
    assert np.array_equal(a, b) and a.tobytes() == b.tobytes()


def test_offline_miss(tmp_path, monkeypatch):
    monkeypatch.delenv("GRAPHALIGN_EMBED_URL", raising=False)
    with pytest.raises(FixtureMiss):
        EmbeddingClient(fixture_dir=tmp_path).embed("unseen")


def _service(recorded):
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        texts = calls[-1]["texts"]
        return httpx.Response(200, json={"dim": 3, "vectors": [recorded[t] for t in texts]})

    return httpx.MockTransport(handler), calls


def test_service_round_trip_against_recorded_server(tmp_path, monkeypatch):
    recorded = {"alpha": [1.0, 0.0, 0.5], "beta": [0.0, 2.0, 0.0]}
    transport, calls = _service(recorded)
    monkeypatch.setenv("GRAPHALIGN_EMBED_KEY", "secret")
    client = EmbeddingClient(fixture_dir=tmp_path, base_url="http://embed.test/embed", transport=transport,
                             record=True)
    out = client.embed_many(["alpha", "beta", "alpha"])
    assert [list(v) for v in out] == [recorded["alpha"], recorded["beta"], recorded["alpha"]]
    assert calls == [{"texts": ["alpha", "beta"]}]
    # Recorded fixtures now serve an offline client with no transport at all.
    offline = EmbeddingClient(fixture_dir=tmp_path)
    assert list(offline.embed("beta")) == recorded["beta"]


def test_service_errors(tmp_path):
    down = httpx.MockTransport(lambda r: (_ for _ in ()).throw(httpx.ConnectError("refused")))
    with pytest.raises(ProviderUnavailable):
        EmbeddingClient(base_url="http://x/embed", transport=down).embed("a")
    bad = httpx.MockTransport(lambda r: httpx.Response(500))
    with pytest.raises(ProviderUnavailable):
        EmbeddingClient(base_url="http://x/embed", transport=bad).embed("a")
    wrong_dim = httpx.MockTransport(lambda r: httpx.Response(200, json={"dim": 3, "vectors": [[1, 2]]}))
    with pytest.raises(DimensionMismatch):
        EmbeddingClient(base_url="http://x/embed", transport=wrong_dim).embed("a")


def test_backend_dim_is_enforced(tmp_path):
    client = EmbeddingClient(backend=HashingEmbedder(4), dim=5)
    with pytest.raises(DimensionMismatch):
        client.embed("a")
