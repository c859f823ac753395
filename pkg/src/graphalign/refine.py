"""Seed-based pruning, graph-token bundles and answer generation."""
from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive_int
from .aligner import example_from_table
from .errors import EmptyGraph, GraphAlignError, NonFiniteValue, ScoreLengthMismatch
from .graph import TextualGraph, induced_subgraph, linearize, neighbors
from .llm import render_prompt

_TOKEN = re.compile(r"\w+|[^\w\s]+")


def count_tokens(text: str, tokenizer=None) -> int:
    """Words plus punctuation clusters; ``tokenizer`` (text -> tokens or int) overrides."""
    if tokenizer is not None:
        out = tokenizer(text)
        return int(out) if isinstance(out, (int, np.integer)) else len(out)
    return len(_TOKEN.findall(text))


@dataclass
class PrunedSubgraph:
    seeds: list
    graph: TextualGraph


def rank_seeds(node_ids, scores, n_seed):
    order = sorted(range(len(node_ids)), key=lambda j: (-scores[j], node_ids[j]))
    return [node_ids[j] for j in order[:n_seed]]


def prune(g_r: TextualGraph, scores, n_seed=25) -> PrunedSubgraph:
    """Keep the ``n_seed`` best-scored nodes, their first-order neighbours and
    every edge among the kept nodes."""
    n_seed = check_positive_int(n_seed, "n_seed")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    ids = g_r.node_ids
    if scores.shape[0] != len(ids):
        raise ScoreLengthMismatch(f"{scores.shape[0]} scores for {len(ids)} nodes")
    seeds = rank_seeds(ids, scores, n_seed)
    keep = set(seeds)
    for v in seeds:
        keep.update(neighbors(g_r, v))
    return PrunedSubgraph(seeds, induced_subgraph(g_r, keep))


class SeedPruner(TransformerMixin, BaseEstimator):
    """``transform`` maps ``(graph, scores)`` pairs to :class:`PrunedSubgraph`."""

    def __init__(self, n_seed=25):
        self.n_seed = n_seed

    def fit(self, X=None, y=None):
        check_positive_int(self.n_seed, "n_seed")
        return self

    def transform(self, X):
        return [prune(g, s, self.n_seed) for g, s in X]


@dataclass
class GenerationBundle:
    prompt: str
    graph_token: np.ndarray
    linearized_graph: str
    token_count: int

    def __post_init__(self):
        self.graph_token = np.asarray(self.graph_token, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.graph_token)):
            raise NonFiniteValue("graph token contains NaN or Inf")

    def to_dict(self):
        payload = np.ascontiguousarray(self.graph_token, dtype="<f8").tobytes()
        return {
            "prompt": self.prompt,
            "linearized_graph": self.linearized_graph,
            "token_count": self.token_count,
            "graph_token": base64.b64encode(payload).decode("ascii"),
            "d_t": int(self.graph_token.shape[0]),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        token = np.frombuffer(base64.b64decode(d["graph_token"]), dtype="<f8")
        if token.shape[0] != d["d_t"]:
            raise ValueError(f"graph token holds {token.shape[0]} values, d_t says {d['d_t']}")
        return cls(d["prompt"], token.copy(), d["linearized_graph"], int(d["token_count"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def make_bundle(model, pruned: PrunedSubgraph, table, question, tokenizer=None) -> GenerationBundle:
    """Pool and project the pruned graph, and render the generator prompt."""
    graph = pruned.graph
    if len(graph) == 0:
        raise EmptyGraph("pruned graph is empty")
    ex = example_from_table(graph, table)
    token = model.project(model.graph_vector(ex))
    text = linearize(graph)
    prompt = render_prompt("generator_qa", graph=text, question=question)
    return GenerationBundle(prompt, token, text, count_tokens(prompt, tokenizer))


def generate_answer(bundle: GenerationBundle, gateway, **params) -> str:
    """Send the text prompt; the graph token stays in the bundle for soft-prompt consumers."""
    try:
        return gateway.complete(bundle.prompt, **params)
    except GraphAlignError as exc:
        exc.bundle = bundle
        raise
