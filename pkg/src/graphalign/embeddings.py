"""Embedding archives, text-embedding providers and cosine similarity."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    FixtureMiss,
    MissingVector,
    NonFiniteValue,
    ProviderUnavailable,
)

log = logging.getLogger(__name__)

ARCHIVE_MAGIC = "graphalign-embeddings/1"


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _as_vector(values, dim=None, what="vector"):
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if dim is not None and vec.shape[0] != dim:
        raise DimensionMismatch(f"{what} has length {vec.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")
    return vec


def cosine(u, v) -> float:
    """Cosine similarity; a zero vector yields 0 and a logged warning."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine of shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        log.warning("cosine with a zero vector; returning 0")
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_rows(matrix, v):
    """Cosine of every row of ``matrix`` against ``v`` (zero rows give 0)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"cannot compare rows of {matrix.shape} with {v.shape}")
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(v)
    out = np.zeros(matrix.shape[0])
    ok = norms > 0
    if not ok.all():
        log.warning("cosine with %d zero vector(s); using 0", int((~ok).sum()))
    out[ok] = (matrix[ok] @ v) / norms[ok]
    return np.clip(out, -1.0, 1.0)


@dataclass
class EmbeddingTable:
    """Vectors for the nodes and edges of one graph, plus a text cache."""

    dim: int
    node_vecs: dict = field(default_factory=dict)
    edge_vecs: dict = field(default_factory=dict)
    text_cache: dict = field(default_factory=dict)

    def node_matrix(self, ids):
        return self._stack(self.node_vecs, ids, "node")

    def edge_matrix(self, indices):
        return self._stack(self.edge_vecs, indices, "edge")

    def _stack(self, table, keys, kind):
        keys = list(keys)
        if not keys:
            return np.zeros((0, self.dim))
        missing = [k for k in keys if k not in table]
        if missing:
            raise MissingVector(f"no vector for {kind} {missing[0]}")
        return np.stack([table[k] for k in keys])

    def check_covers(self, graph):
        for v in graph.nodes:
            if v not in self.node_vecs:
                raise MissingVector(f"no vector for node {v}")
        for i in graph.edge_origin:
            if i not in self.edge_vecs:
                raise MissingVector(f"no vector for edge {i}")


def save_embeddings(path, table: EmbeddingTable):
    """Write a JSON header line followed by little-endian float32 rows."""
    node_ids = sorted(table.node_vecs)
    edge_ids = sorted(table.edge_vecs)
    header = {
        "format": ARCHIVE_MAGIC,
        "dim": int(table.dim),
        "n_nodes": len(node_ids),
        "n_edges": len(edge_ids),
        "node_ids": node_ids,
        "edge_indices": edge_ids,
    }
    rows = [table.node_vecs[i] for i in node_ids] + [table.edge_vecs[i] for i in edge_ids]
    payload = np.asarray(rows, dtype="<f4").reshape(-1, table.dim) if rows else np.zeros((0,), "<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload.tobytes())


def load_embeddings(path, graph=None) -> EmbeddingTable:
    raw = Path(path).read_bytes()
    line, _, payload = raw.partition(b"\n")
    header = json.loads(line)
    dim = int(header["dim"])
    node_ids = [int(i) for i in header["node_ids"]]
    edge_ids = [int(i) for i in header["edge_indices"]]
    if len(node_ids) != header["n_nodes"] or len(edge_ids) != header["n_edges"]:
        raise DimensionMismatch("archive id lists disagree with declared counts")
    count = len(node_ids) + len(edge_ids)
    if len(payload) != count * dim * 4:
        raise DimensionMismatch(
            f"archive payload holds {len(payload)} bytes; expected {count} rows of dim {dim}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(count, dim)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("archive contains NaN or Inf")
    table = EmbeddingTable(
        dim,
        {i: data[k] for k, i in enumerate(node_ids)},
        {i: data[len(node_ids) + k] for k, i in enumerate(edge_ids)},
    )
    if graph is not None:
        table.check_covers(graph)
    return table


_TOKEN = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Deterministic bag-of-words embedder.

    Each lowercase alphanumeric token maps to a fixed Gaussian vector seeded
    by its hash; a text embeds as the sum of its token vectors. Used to
    build offline fixtures where no embedding service is available.
    """

    def __init__(self, dim=48, salt="graphalign"):
        self.dim = dim
        self.salt = salt
        self._tokens = {}

    def _token_vec(self, token):
        vec = self._tokens.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.sha256(f"{self.salt}:{token}".encode()).digest()[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            self._tokens[token] = vec
        return vec

    def __call__(self, texts):
        out = []
        for text in texts:
            vec = np.zeros(self.dim)
            for tok in _TOKEN.findall(text.lower()):
                vec = vec + self._token_vec(tok)
            out.append(vec)
        return np.asarray(out).reshape(len(texts), self.dim)


class EmbeddingClient:
    """Embeds text through fixtures, an HTTP service or a local backend.

    Lookup order: in-memory cache, fixture directory (``<sha256>.json``),
    then the service (``base_url``) or ``backend`` callable. With neither
    configured the client is offline and unseen text raises FixtureMiss.
    ``record=True`` writes every fetched vector back to the fixture dir.
    """

    def __init__(self, fixture_dir=None, base_url=None, backend=None, record=False,
                 dim=None, api_key_env="GRAPHALIGN_EMBED_KEY", transport=None, timeout=30.0):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.base_url = base_url or os.environ.get("GRAPHALIGN_EMBED_URL")
        self.backend = backend
        self.record = record
        self.dim = dim
        self.api_key_env = api_key_env
        self.transport = transport
        self.timeout = timeout
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def offline(self):
        return self.base_url is None and self.backend is None

    def embed(self, text: str):
        return self.embed_many([text])[0]

    def embed_many(self, texts):
        texts = list(texts)
        found = {}
        todo = []
        for t in texts:
            key = text_key(t)
            if key in self._cache:
                found[key] = self._cache[key]
                continue
            vec = self._read_fixture(key)
            if vec is not None:
                found[key] = vec
            elif t not in todo:
                todo.append(t)
        if todo:
            if self.offline:
                raise FixtureMiss(f"no embedding fixture for text {todo[0][:60]!r}")
            fetched = self._fetch(todo)
            for t, vec in zip(todo, fetched):
                found[text_key(t)] = vec
                if self.record and self.fixture_dir is not None:
                    self._write_fixture(t, vec)
        with self._lock:
            for key, vec in found.items():
                self._cache.setdefault(key, vec)
            return [self._cache[text_key(t)].copy() for t in texts]

    def _read_fixture(self, key):
        if self.fixture_dir is None:
            return None
        path = self.fixture_dir / f"{key}.json"
        if not path.exists():
            return None
        return _as_vector(json.loads(path.read_text())["vector"], self.dim, "fixture vector")

    def _write_fixture(self, text, vec):
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        body = {"text": text, "vector": [float(x) for x in vec]}
        (self.fixture_dir / f"{text_key(text)}.json").write_text(json.dumps(body) + "\n")

    def _fetch(self, texts):
        if self.backend is not None:
            vecs = self.backend(texts)
        else:
            vecs = self._post(texts)
        vecs = [_as_vector(v, self.dim, "embedding") for v in vecs]
        if self.dim is None and vecs:
            self.dim = vecs[0].shape[0]
        return vecs

    def _post(self, texts):
        import httpx

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            with httpx.Client(transport=self.transport, timeout=self.timeout) as client:
                resp = client.post(self.base_url, json={"texts": texts}, headers=headers)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"embedding service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderUnavailable(f"embedding service returned HTTP {resp.status_code}")
        body = resp.json()
        vectors = body["vectors"]
        if len(vectors) != len(texts):
            raise ProviderUnavailable("embedding service returned the wrong number of vectors")
        for v in vectors:
            if len(v) != body["dim"]:
                raise DimensionMismatch(f"service vector of length {len(v)} under dim {body['dim']}")
        return vectors
