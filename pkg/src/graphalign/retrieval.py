"""Top-k relevance ranking, prize assignment and prize-collecting subgraph selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive_int, check_positive_number
from .embeddings import cosine_rows, text_key
from .errors import (
    DimensionMismatch,
    EmptyGraph,
    EmptyItemSet,
    GraphTooLargeForExact,
    RankOverflow,
)
from .graph import TextualGraph

EXACT_LIMIT = 15
MODES = ("exact", "heuristic")
# Negative-gain hops allowed before reaching a rewarding node or edge.
BRIDGE_DEPTH = 2


@dataclass(frozen=True)
class RankedList:
    """``(item id, similarity)`` pairs, best first, ties by ascending id."""

    entries: tuple = ()

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self):
        return [i for i, _ in self.entries]


@dataclass
class PrizeMap:
    node_prize: dict = field(default_factory=dict)
    edge_prize: dict = field(default_factory=dict)
    edge_cost: float = 0.5

    def node(self, v):
        return self.node_prize.get(v, 0.0)

    def edge(self, i):
        return self.edge_prize.get(i, 0.0)


@dataclass
class RetrievedSubgraph:
    nodes: list
    edge_indices: list
    objective: float

    def to_dict(self):
        return {"nodes": list(self.nodes), "edge_indices": list(self.edge_indices),
                "objective": self.objective}


def top_k(query_vec, item_vecs, k) -> RankedList:
    """Rank items by cosine similarity to ``query_vec`` and keep the best ``k``.

    ``item_vecs`` is a mapping ``id -> vector`` or a sequence of vectors
    (ids are then positions).
    """
    k = check_positive_int(k, "k")
    if isinstance(item_vecs, dict):
        ids = list(item_vecs)
        vecs = [item_vecs[i] for i in ids]
    else:
        vecs = list(item_vecs)
        ids = list(range(len(vecs)))
    if not ids:
        raise EmptyItemSet("no items to rank")
    matrix = np.asarray(vecs, dtype=np.float64)
    query = np.asarray(query_vec, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != query.shape[0]:
        raise DimensionMismatch(f"items of shape {matrix.shape} vs query of length {query.shape[0]}")
    sims = cosine_rows(matrix, query)
    order = sorted(range(len(ids)), key=lambda j: (-sims[j], ids[j]))[:k]
    return RankedList(tuple((ids[j], float(sims[j])) for j in order))


def assign_prizes(ranked_nodes, ranked_edges, k, edge_cost=0.5) -> PrizeMap:
    """The item at 0-based rank ``i`` earns ``k - i``; everything else earns 0."""
    k = check_positive_int(k, "k")
    edge_cost = check_positive_number(edge_cost, "edge_cost", allow_zero=True)
    for name, ranked in (("node", ranked_nodes), ("edge", ranked_edges)):
        if len(ranked) > k:
            raise RankOverflow(f"{name} ranking has {len(ranked)} entries for k={k}")
    return PrizeMap(
        {item: float(k - i) for i, (item, _) in enumerate(ranked_nodes)},
        {item: float(k - i) for i, (item, _) in enumerate(ranked_edges)},
        float(edge_cost),
    )


def subgraph_objective(prizes: PrizeMap, nodes, edge_indices) -> float:
    return (sum(prizes.node(v) for v in nodes)
            + sum(prizes.edge(i) for i in edge_indices)
            - len(edge_indices) * prizes.edge_cost)


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def _candidate_key(objective, nodes, edges):
    # Larger is better: objective first, then smaller structures, then lower ids.
    return (round(objective, 9), -len(nodes), -len(edges), [-v for v in nodes])


def _solve_exact(g: TextualGraph, prizes: PrizeMap):
    ids = g.node_ids
    n = len(ids)
    if n > EXACT_LIMIT:
        raise GraphTooLargeForExact(f"exact mode supports at most {EXACT_LIMIT} nodes, got {n}")
    pos = {v: j for j, v in enumerate(ids)}
    adj = [0] * n
    edge_masks = []
    for s, _, d in g.edges:
        a, b = pos[s], pos[d]
        adj[a] |= 1 << b
        adj[b] |= 1 << a
        edge_masks.append((1 << a) | (1 << b))
    cost = prizes.edge_cost
    gains = [prizes.edge(i) - cost for i in range(len(g.edges))]
    by_gain = sorted(range(len(g.edges)), key=lambda i: (-gains[i], i))
    node_prize = [prizes.node(v) for v in ids]

    best = None
    for mask in range(1, 1 << n):
        low = mask & -mask
        reach = low
        frontier = low
        while frontier:
            bit = frontier & -frontier
            frontier ^= bit
            new = adj[bit.bit_length() - 1] & mask & ~reach
            reach |= new
            frontier |= new
        if reach != mask:
            continue
        members = [ids[j] for j in range(n) if mask >> j & 1]
        dsu = _DisjointSet(members)
        chosen = []
        total = 0.0
        for i in by_gain:
            if edge_masks[i] & mask != edge_masks[i]:
                continue
            s, _, d = g.edges[i]
            if gains[i] > 0:
                dsu.union(s, d)
                chosen.append(i)
                total += gains[i]
            elif dsu.union(s, d):
                chosen.append(i)
                total += gains[i]
        total += sum(node_prize[j] for j in range(n) if mask >> j & 1)
        chosen.sort()
        key = _candidate_key(total, members, chosen)
        if best is None or key > best[0]:
            best = (key, members, chosen)
    _, nodes, edges = best
    return nodes, edges


def _solve_heuristic(g: TextualGraph, prizes: PrizeMap):
    cost = prizes.edge_cost
    incident = {v: [] for v in g.nodes}
    for i, (s, _, d) in enumerate(g.edges):
        incident[s].append(i)
        if d != s:
            incident[d].append(i)

    def other(i, v):
        s, _, d = g.edges[i]
        return d if s == v else s

    start = min(g.nodes, key=lambda v: (-prizes.node(v), v))
    nodes = {start}
    edges = set()
    while True:
        best = None  # (gain, -new node count, tie ids, new nodes, new edges)

        def offer(gain, new_nodes, new_edges):
            nonlocal best
            if gain <= 0:
                return
            cand = (round(gain, 9), -len(new_nodes),
                    tuple(-x for x in new_nodes + new_edges), new_nodes, new_edges)
            if best is None or cand[:3] > best[:3]:
                best = cand

        def extend(v, gain, path_nodes, path_edges):
            # Walk up to BRIDGE_DEPTH + 1 new nodes away from the current tree.
            for e in incident[v]:
                x = other(e, v)
                if x in nodes or x in path_nodes:
                    continue
                step = gain + prizes.node(x) + prizes.edge(e) - cost
                pn, pe = path_nodes + (x,), path_edges + (e,)
                offer(step, pn, pe)
                if len(pn) <= BRIDGE_DEPTH:
                    extend(x, step, pn, pe)

        for u in sorted(nodes):
            for e in incident[u]:
                if e not in edges and other(e, u) in nodes:
                    offer(prizes.edge(e) - cost, (), (e,))
            extend(u, 0.0, (), ())
        if best is None:
            break
        nodes.update(best[3])
        edges.update(best[4])

    # Drop leaves that cost more than they bring.
    changed = True
    while changed and len(nodes) > 1:
        changed = False
        for v in sorted(nodes):
            own = [i for i in edges if v in (g.edges[i][0], g.edges[i][2])]
            if len(own) != 1 or g.edges[own[0]][0] == g.edges[own[0]][2]:
                continue
            if prizes.node(v) + prizes.edge(own[0]) - cost < 0:
                nodes.discard(v)
                edges.discard(own[0])
                changed = True
                break
    return sorted(nodes), sorted(edges)


def solve_pcst(g: TextualGraph, prizes: PrizeMap, mode="heuristic") -> RetrievedSubgraph:
    """Pick a connected subgraph maximising collected prize minus edge cost."""
    if len(g) == 0:
        raise EmptyGraph("cannot select a subgraph of an empty graph")
    if mode == "exact":
        nodes, edges = _solve_exact(g, prizes)
    elif mode == "heuristic":
        nodes, edges = _solve_heuristic(g, prizes)
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return RetrievedSubgraph(nodes, edges, subgraph_objective(prizes, nodes, edges))


def query_vector(query, table=None, embedder=None):
    if not isinstance(query, str):
        return np.asarray(query, dtype=np.float64)
    if table is not None and text_key(query) in table.text_cache:
        return table.text_cache[text_key(query)]
    if embedder is None:
        raise ValueError("a text query needs an embedder or a cached vector")
    return embedder.embed(query)


def retrieve(g: TextualGraph, table, query, k=10, edge_cost=0.5, mode="heuristic",
             embedder=None) -> RetrievedSubgraph:
    """Rank nodes and edges against the query, assign prizes, solve PCST."""
    q = query_vector(query, table, embedder)
    ranked_nodes = top_k(q, {v: table.node_vecs[v] for v in g.nodes}, k)
    if g.edges:
        ranked_edges = top_k(q, {i: table.edge_vecs[o] for i, o in enumerate(g.edge_origin)}, k)
    else:
        ranked_edges = RankedList()
    prizes = assign_prizes(ranked_nodes, ranked_edges, k, edge_cost)
    return solve_pcst(g, prizes, mode)


class SubgraphRetriever(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`retrieve`.

    ``transform`` takes an iterable of ``(graph, table, query)`` triples and
    returns one :class:`RetrievedSubgraph` per triple.
    """

    def __init__(self, k=10, edge_cost=0.5, mode="heuristic"):
        self.k = k
        self.edge_cost = edge_cost
        self.mode = mode

    def fit(self, X=None, y=None):
        check_positive_int(self.k, "k")
        check_positive_number(self.edge_cost, "edge_cost", allow_zero=True)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return self

    def transform(self, X):
        self.fit()
        return [retrieve(g, table, q, self.k, self.edge_cost, self.mode) for g, table, q in X]
