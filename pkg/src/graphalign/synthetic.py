"""Synthetic alignment data with a known answer.

Each example is a random tree. One node (the anchor) carries an extra
shared "marker" direction; the anchor text vector is a near copy of that
node's features, the query a noisier copy, and the rationale vector a noisy
image of the mean node feature. A working aligner should learn to put its
node mass on the anchor and to map pooled graphs close to the rationale.
"""
from __future__ import annotations

import numpy as np

from .aligner import AlignTrainExample
from .graph import TextualGraph


def make_alignment_dataset(n_examples, dim=32, seed=0, marker=1.0, min_nodes=5, max_nodes=8,
                           anchor_noise=0.1, query_noise=0.3, rationale_noise=0.3):
    """Returns ``(examples, anchors)`` where ``anchors[i]`` is the anchor node id."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    scale = 1.0 / np.sqrt(dim)
    examples, anchors = [], []
    for i in range(n_examples):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        edges = tuple((int(rng.integers(0, v)), "r", v) for v in range(1, n))
        graph = TextualGraph({v: "" for v in range(n)}, edges)
        x = rng.standard_normal((n, dim)) * scale
        a = int(rng.integers(n))
        x[a] += marker * direction
        e = rng.standard_normal((len(edges), dim)) * scale
        anchor = x[a] + anchor_noise * rng.standard_normal(dim) * scale
        query = x[a] + query_noise * rng.standard_normal(dim) * scale
        rationale = x.mean(axis=0) + rationale_noise * rng.standard_normal(dim) * scale
        examples.append(AlignTrainExample(graph, x, e, query, anchor, rationale, id=f"s{i:03d}"))
        anchors.append(a)
    return examples, anchors
