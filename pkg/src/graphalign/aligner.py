"""Dual-alignment graph aligner.

A message-passing encoder turns a retrieved subgraph into node embeddings.
A scorer ranks nodes against the query and is pulled towards an
anchor-similarity distribution with a KL term. The mean-pooled graph
vector and a rationale text vector go through one shared projection and
are matched with a symmetric in-batch contrastive term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import tensor as T
from ._validation import check_matrix, check_positive_int, check_positive_number, check_vector
from .embeddings import cosine_rows
from .errors import (
    BatchMismatch,
    DimMismatch,
    EmptyDataset,
    EmptyGraph,
    LengthMismatch,
    NonPositiveTemperature,
)
from .graph import TextualGraph

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class AlignTrainExample:
    """Features of one retrieved subgraph.

    ``node_feats`` rows follow the graph's ascending node ids and
    ``edge_feats`` rows follow its edge order. ``anchor_vec`` and
    ``rationale_vec`` are the supervision targets and may be ``None`` when
    the example is only used for inference; ``query_vec`` is needed only
    for node scoring.
    """

    graph: TextualGraph
    node_feats: np.ndarray
    edge_feats: np.ndarray
    query_vec: np.ndarray = None
    anchor_vec: np.ndarray = None
    rationale_vec: np.ndarray = None
    id: str = None

    def __post_init__(self):
        n, m = len(self.graph), len(self.graph.edges)
        if n == 0:
            raise EmptyGraph("example graph has no nodes")
        self.node_feats = check_matrix(self.node_feats, "node_feats")
        dim = self.node_feats.shape[1]
        self.edge_feats = check_matrix(self.edge_feats, "edge_feats", cols=dim, allow_empty=True)
        if self.node_feats.shape[0] != n:
            raise DimMismatch(f"{self.node_feats.shape[0]} node feature rows for {n} nodes")
        if self.edge_feats.shape[0] != m:
            raise DimMismatch(f"{self.edge_feats.shape[0]} edge feature rows for {m} edges")
        if self.query_vec is not None:
            self.query_vec = check_vector(self.query_vec, "query_vec", dim)
        if self.anchor_vec is not None:
            self.anchor_vec = check_vector(self.anchor_vec, "anchor_vec", dim)
        if self.rationale_vec is not None:
            self.rationale_vec = check_vector(self.rationale_vec, "rationale_vec", dim)

    @property
    def dim(self):
        return self.node_feats.shape[1]

    @cached_property
    def message_matrices(self):
        """Averaging operators ``(P, Q)`` for node and edge messages.

        Node ``v`` receives its own message plus one per incident edge end,
        so ``P @ H`` and ``Q @ E`` are the means of incoming node and edge
        terms.
        """
        ids = self.graph.node_ids
        pos = {v: i for i, v in enumerate(ids)}
        n, m = len(ids), len(self.graph.edges)
        P = np.eye(n)
        Q = np.zeros((n, m))
        for j, (s, _, d) in enumerate(self.graph.edges):
            a, b = pos[s], pos[d]
            P[b, a] += 1.0
            Q[b, j] += 1.0
            if a != b:
                P[a, b] += 1.0
                Q[a, j] += 1.0
        deg = P.sum(axis=1, keepdims=True)
        return P / deg, Q / deg


def anchor_distribution(node_feats, anchor_vec):
    """Softmax over nodes of cosine(node text vector, anchor vector)."""
    node_feats = check_matrix(node_feats, "node_feats")
    anchor_vec = check_vector(anchor_vec, "anchor_vec")
    if node_feats.shape[1] != anchor_vec.shape[0]:
        raise DimMismatch(f"node dim {node_feats.shape[1]} vs anchor dim {anchor_vec.shape[0]}")
    return T.softmax(cosine_rows(node_feats, anchor_vec)).data


def node_alignment_loss(p_anchor, p_prediction):
    """Mean over nodes of ``p_anchor * log(p_anchor / p_prediction)``.

    Zero anchor mass contributes nothing; predictions are floored at 1e-12
    inside the log. Returns a Tensor when ``p_prediction`` is one.
    """
    as_float = not isinstance(p_prediction, T.Tensor)
    pa = np.asarray(p_anchor, dtype=np.float64).reshape(-1)
    pp = T.reshape(T.as_tensor(p_prediction), (-1,))
    if pa.shape[0] != pp.shape[0]:
        raise LengthMismatch(f"distributions of length {pa.shape[0]} and {pp.shape[0]}")
    n = pa.shape[0]
    mask = pa > 0
    entropy_term = float(np.sum(pa[mask] * np.log(pa[mask])))
    weights = np.where(mask, pa, 0.0)
    cross = T.sum(T.mul(T.log(T.clamp_min(pp, PROB_FLOOR)), weights))
    loss = T.mul(T.sub(entropy_term, cross), 1.0 / n)
    return float(loss) if as_float else loss


def graph_alignment_loss(batch_g, batch_s, temperature):
    """Symmetric InfoNCE over cosine similarities with in-batch negatives."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature!r}")
    as_float = not (isinstance(batch_g, T.Tensor) or isinstance(batch_s, T.Tensor))
    G, S = T.as_tensor(batch_g), T.as_tensor(batch_s)
    if G.ndim != 2 or G.shape != S.shape or G.shape[0] < 1:
        raise BatchMismatch(f"batches of shape {G.shape} and {S.shape}")
    n = G.shape[0]
    logits = T.mul(T.pairwise_dot(T.l2_normalize(G), T.l2_normalize(S)), 1.0 / temperature)
    eye = np.eye(n)
    g_to_s = T.mul(T.sum(T.mul(T.log_softmax(logits, axis=1), eye)), -1.0 / n)
    s_to_g = T.mul(T.sum(T.mul(T.log_softmax(T.transpose(logits), axis=1), eye)), -1.0 / n)
    loss = T.mul(T.add(g_to_s, s_to_g), 0.5)
    return float(loss) if as_float else loss


def pool_graph(n_g):
    """Mean of the node embedding rows."""
    arr = n_g.data if isinstance(n_g, T.Tensor) else np.asarray(n_g, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptyGraph("cannot pool an empty set of node embeddings")
    return T.row_mean(n_g).data if not isinstance(n_g, T.Tensor) else T.row_mean(n_g)


class GraphAligner(TransformerMixin, BaseEstimator):
    """Trainable encoder + node scorer + shared projection.

    Parameters mirror the usual aligner settings: ``hidden_dim`` and
    ``n_layers`` size the encoder, ``target_dim`` is the width of the
    projected graph token, ``steps`` counts optimizer updates (the align
    degree) over seeded batches of ``batch_size`` examples.

    ``fit`` takes a list of :class:`AlignTrainExample`; ``transform``
    returns one projected graph token per example.
    """

    def __init__(self, hidden_dim=1024, n_layers=4, target_dim=4096, temperature=0.07,
                 steps=60, batch_size=8, learning_rate=1e-5, random_state=0, root_weight=False):
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.target_dim = target_dim
        self.temperature = temperature
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.root_weight = root_weight

    # -- setup -------------------------------------------------------------
    def _check_hyper(self):
        check_positive_int(self.hidden_dim, "hidden_dim")
        check_positive_int(self.n_layers, "n_layers")
        check_positive_int(self.target_dim, "target_dim")
        if not (isinstance(self.temperature, (int, float)) and self.temperature > 0):
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature!r}")
        check_positive_int(self.steps, "steps")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_number(self.learning_rate, "learning_rate")

    @property
    def proj_input_dim_(self):
        return max(self.hidden_dim, self.n_features_in_)

    def initialize(self, n_features):
        """Draw fresh Xavier-uniform weights (zero biases) for ``n_features`` inputs."""
        self._check_hyper()
        d, ds, dt = self.hidden_dim, n_features, self.target_dim
        self.n_features_in_ = ds
        rng = np.random.default_rng(self.random_state)
        store = T.ParamStore()
        for layer in range(self.n_layers):
            d_in = ds if layer == 0 else d
            store.add(f"gnn.{layer}.w_node", T.xavier_uniform(rng, d_in, d))
            store.add(f"gnn.{layer}.w_edge", T.xavier_uniform(rng, ds, d))
            store.add(f"gnn.{layer}.bias", np.zeros(d))
            if self.root_weight:
                store.add(f"gnn.{layer}.w_root", T.xavier_uniform(rng, d_in, d))
        store.add("scorer.w1", T.xavier_uniform(rng, d + ds, d))
        store.add("scorer.b1", np.zeros(d))
        store.add("scorer.w2", T.xavier_uniform(rng, d, 1))
        store.add("scorer.b2", np.zeros(1))
        m = self.proj_input_dim_
        store.add("proj.w1", T.xavier_uniform(rng, m, m))
        store.add("proj.b1", np.zeros(m))
        store.add("proj.w2", T.xavier_uniform(rng, m, dt))
        store.add("proj.b2", np.zeros(dt))
        self.params_ = store
        self.loss_log_ = []
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("GraphAligner is not initialized; call fit or initialize first")

    def _check_example(self, ex):
        if ex.dim != self.n_features_in_:
            raise DimMismatch(f"example features have dim {ex.dim}, model expects {self.n_features_in_}")

    # -- differentiable forward pieces --------------------------------------
    def _encode(self, ex):
        P, Q = ex.message_matrices
        p = self.params_
        h = T.Tensor(ex.node_feats)
        edges = T.Tensor(ex.edge_feats)
        for layer in range(self.n_layers):
            msg = T.matmul(P, T.matmul(h, p[f"gnn.{layer}.w_node"]))
            if edges.shape[0]:
                msg = T.add(msg, T.matmul(Q, T.matmul(edges, p[f"gnn.{layer}.w_edge"])))
            if self.root_weight:
                msg = T.add(msg, T.matmul(h, p[f"gnn.{layer}.w_root"]))
            h = T.relu(T.add(msg, p[f"gnn.{layer}.bias"]))
        return h

    def _score(self, n_g, query_vec):
        p = self.params_
        n_g = T.as_tensor(n_g)
        q = np.broadcast_to(query_vec, (n_g.shape[0], query_vec.shape[0]))
        z = T.concat_rows(n_g, q)
        hidden = T.relu(T.add(T.matmul(z, p["scorer.w1"]), p["scorer.b1"]))
        logits = T.add(T.matmul(hidden, p["scorer.w2"]), p["scorer.b2"])
        return T.softmax(T.reshape(logits, (-1,)))

    def _project(self, rows):
        p = self.params_
        rows = T.as_tensor(rows)
        if rows.ndim == 1:
            rows = T.reshape(rows, (1, -1))
        width = self.proj_input_dim_
        if rows.shape[1] not in (self.hidden_dim, self.n_features_in_):
            raise DimMismatch(f"projection input of width {rows.shape[1]}")
        x = T.pad_cols(rows, width)
        hidden = T.relu(T.add(T.matmul(x, p["proj.w1"]), p["proj.b1"]))
        return T.add(T.matmul(hidden, p["proj.w2"]), p["proj.b2"])

    def _example_losses(self, batch):
        """Per-batch node (KL) and graph (contrastive) losses as Tensors."""
        kl_terms, pooled, texts = [], [], []
        for ex in batch:
            if ex.anchor_vec is None or ex.rationale_vec is None or ex.query_vec is None:
                raise ValueError(f"training example {ex.id!r} lacks query, anchor or rationale vectors")
            n_g = self._encode(ex)
            pred = self._score(n_g, ex.query_vec)
            target = anchor_distribution(ex.node_feats, ex.anchor_vec)
            kl_terms.append(node_alignment_loss(target, pred))
            pooled.append(T.reshape(T.row_mean(n_g), (1, -1)))
            texts.append(ex.rationale_vec.reshape(1, -1))
        node_loss = T.mul(T.sum(T.concat([T.reshape(k, (1,)) for k in kl_terms])), 1.0 / len(batch))
        graph_tokens = self._project(T.concat(pooled, axis=0))
        text_tokens = self._project(np.concatenate(texts, axis=0))
        graph_loss = graph_alignment_loss(graph_tokens, text_tokens, self.temperature)
        return node_loss, graph_loss

    def total_loss(self, batch):
        node_loss, graph_loss = self._example_losses(batch)
        return T.add(node_loss, graph_loss)

    # -- estimator API --------------------------------------------------------
    def fit(self, X, y=None):
        """Minimise node + graph alignment loss for ``steps`` Adam updates."""
        X = list(X)
        if not X:
            raise EmptyDataset("cannot train on an empty dataset")
        self._check_hyper()
        self.initialize(X[0].dim)
        for ex in X:
            self._check_example(ex)
        rng = np.random.default_rng(self.random_state)
        order, cursor = rng.permutation(len(X)), 0
        size = min(self.batch_size, len(X))
        b1, b2 = ADAM_BETAS
        for step in range(1, self.steps + 1):
            if cursor + size > len(order):
                order, cursor = rng.permutation(len(X)), 0
            batch = [X[i] for i in order[cursor: cursor + size]]
            cursor += size
            self.params_.zero_grad()
            node_loss, graph_loss = self._example_losses(batch)
            total = T.add(node_loss, graph_loss)
            T.backward(total)
            T.adam_step(self.params_, self.learning_rate, b1, b2, ADAM_EPS)
            self.loss_log_.append((step, float(node_loss), float(graph_loss), float(total)))
            log.debug("step %d: L_NA=%.6f L_GA=%.6f", step, float(node_loss), float(graph_loss))
        return self

    def encode(self, ex):
        self._check_fitted()
        self._check_example(ex)
        return self._encode(ex).data

    def score_nodes(self, n_g, query_vec):
        self._check_fitted()
        n_g = np.asarray(n_g, dtype=np.float64)
        query_vec = check_vector(query_vec, "query_vec", self.n_features_in_)
        if n_g.ndim != 2 or n_g.shape[1] != self.hidden_dim:
            raise DimMismatch(f"node embeddings of shape {n_g.shape}, hidden_dim {self.hidden_dim}")
        return self._score(n_g, query_vec).data

    def predict_proba(self, ex):
        """Node importance distribution for one example (ascending node ids)."""
        if ex.query_vec is None:
            raise ValueError("scoring nodes needs the example's query vector")
        return self.score_nodes(self.encode(ex), ex.query_vec)

    def graph_vector(self, ex):
        return pool_graph(self.encode(ex))

    def project(self, r):
        self._check_fitted()
        r = np.asarray(r, dtype=np.float64)
        out = self._project(r).data
        return out[0] if r.ndim == 1 else out

    def transform(self, X):
        """Projected graph token for each example, shape ``(len(X), target_dim)``."""
        self._check_fitted()
        X = list(X)
        if not X:
            return np.zeros((0, self.target_dim))
        pooled = np.stack([self.graph_vector(ex) for ex in X])
        return self.project(pooled)

    # -- persistence -------------------------------------------------------------
    def save(self, path, extra=None):
        self._check_fitted()
        meta = {"hyper": self.get_params(), "n_features": self.n_features_in_}
        if extra:
            meta.update(extra)
        T.save_params(path, self.params_, meta)

    @classmethod
    def load(cls, path):
        store, meta = T.load_params(path)
        model = cls(**meta["hyper"])
        model.initialize(meta["n_features"])
        for name in model.params_:
            if name not in store.params or store[name].shape != model.params_[name].shape:
                raise DimMismatch(f"checkpoint parameter {name!r} is missing or misshapen")
        model.params_ = store
        return model


# Functional forms of the estimator methods.
def encode(model: GraphAligner, ex: AlignTrainExample):
    return model.encode(ex)


def score_nodes(model: GraphAligner, n_g, query_vec):
    return model.score_nodes(n_g, query_vec)


def project(model: GraphAligner, r):
    return model.project(r)


def example_from_table(graph, table, query_vec=None, anchor_vec=None, rationale_vec=None, id=None):
    """Gather node and edge features for ``graph`` from an embedding table."""
    return AlignTrainExample(
        graph,
        table.node_matrix(graph.node_ids),
        table.edge_matrix(graph.edge_origin).reshape(len(graph.edges), table.dim),
        query_vec, anchor_vec, rationale_vec, id,
    )


def train_aligner(dataset, steps=60, batch_size=8, learning_rate=1e-5, seed=0, **hyper):
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    model = GraphAligner(steps=steps, batch_size=batch_size, learning_rate=learning_rate,
                         random_state=seed, **hyper)
    return model.fit(dataset)
