"""Textual graphs: loading, slicing and linearization."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DanglingEdge, DuplicateNodeId, MalformedRow, UnknownNode

NODE_HEADER = ("node_id", "node_attr")
EDGE_HEADER = ("src", "edge_attr", "dst")


@dataclass(frozen=True)
class TextualGraph:
    """Immutable graph whose nodes and edges carry text.

    ``nodes`` maps node id to text and is kept in ascending id order.
    ``edges`` is the ordered list of ``(src, text, dst)`` triples.
    ``edge_origin[i]`` is the index of edge ``i`` in the graph this one was
    sliced from (identity for a freshly loaded graph).
    """

    nodes: Mapping[int, str]
    edges: tuple = ()
    edge_origin: tuple = field(default=None, compare=False)

    def __post_init__(self):
        nodes = {int(k): str(self.nodes[k]) for k in sorted(self.nodes)}
        edges = tuple((int(s), str(t), int(d)) for s, t, d in self.edges)
        for s, _, d in edges:
            for end in (s, d):
                if end not in nodes:
                    raise DanglingEdge(f"edge endpoint {end} is not a node")
        origin = self.edge_origin
        if origin is None:
            origin = tuple(range(len(edges)))
        elif len(origin) != len(edges):
            raise ValueError("edge_origin length must match edges")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_origin", tuple(int(i) for i in origin))

    @property
    def node_ids(self):
        return list(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node_id):
        return node_id in self.nodes

    def adjacency(self):
        """Undirected adjacency as ``{node: sorted neighbour list}``."""
        adj = {v: set() for v in self.nodes}
        for s, _, d in self.edges:
            if s != d:
                adj[s].add(d)
                adj[d].add(s)
        return {v: sorted(us) for v, us in adj.items()}


def _parse_id(raw, line_no):
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise MalformedRow(f"line {line_no}: id {raw!r} is not an integer") from None
    if value < 0:
        raise MalformedRow(f"line {line_no}: id {value} is negative")
    return value


def _rows(table, header, name):
    reader = csv.reader(io.StringIO(table))
    first = next(reader, None)
    if first is None:
        if name == "edges":
            return []
        raise MalformedRow(f"{name} table is empty; expected header {','.join(header)}")
    if tuple(first) != header:
        raise MalformedRow(f"{name} header must be {','.join(header)}, got {','.join(first)}")
    rows = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRow(f"{name} line {line_no}: expected {len(header)} columns, got {len(row)}")
        rows.append((line_no, row))
    return rows


def load_graph(nodes_table: str, edges_table: str) -> TextualGraph:
    """Parse ``node_id,node_attr`` and ``src,edge_attr,dst`` tables."""
    nodes = {}
    for line_no, (raw_id, text) in _rows(nodes_table, NODE_HEADER, "nodes"):
        node_id = _parse_id(raw_id, line_no)
        if node_id in nodes:
            raise DuplicateNodeId(f"node id {node_id} appears twice")
        nodes[node_id] = text
    edges = []
    for line_no, (src, text, dst) in _rows(edges_table, EDGE_HEADER, "edges"):
        s, d = _parse_id(src, line_no), _parse_id(dst, line_no)
        for end in (s, d):
            if end not in nodes:
                raise DanglingEdge(f"edges line {line_no}: node {end} is absent")
        edges.append((s, text, d))
    return TextualGraph(nodes, tuple(edges))


def read_graph(nodes_path, edges_path) -> TextualGraph:
    return load_graph(
        Path(nodes_path).read_text(encoding="utf-8"),
        Path(edges_path).read_text(encoding="utf-8"),
    )


def _write_rows(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def nodes_table(g: TextualGraph) -> str:
    return _write_rows(NODE_HEADER, g.nodes.items())


def edges_table(g: TextualGraph) -> str:
    return _write_rows(EDGE_HEADER, g.edges)


def linearize(g: TextualGraph) -> str:
    """Node block (ascending ids) followed by the edge block (stored order)."""
    return nodes_table(g) + edges_table(g)


def load_linearized(text: str) -> TextualGraph:
    """Inverse of :func:`linearize`."""
    rows = list(csv.reader(io.StringIO(text)))
    try:
        cut = rows.index(list(EDGE_HEADER))
    except ValueError:
        raise MalformedRow("linearized graph lacks the edge header") from None
    return load_graph(_write_rows(*_split(rows[:cut])), _write_rows(*_split(rows[cut:])))


def _split(rows):
    return (rows[0] if rows else NODE_HEADER), rows[1:]


def write_graph(g: TextualGraph, nodes_path, edges_path):
    Path(nodes_path).write_text(nodes_table(g), encoding="utf-8")
    Path(edges_path).write_text(edges_table(g), encoding="utf-8")


def as_node_set(ids: Iterable[int]) -> list:
    return sorted(set(int(i) for i in ids))


def _check_known(g, ids):
    for v in ids:
        if v not in g.nodes:
            raise UnknownNode(f"node {v} is not in the graph")


def induced_subgraph(g: TextualGraph, keep: Iterable[int]) -> TextualGraph:
    keep = as_node_set(keep)
    _check_known(g, keep)
    kept = set(keep)
    picked = [i for i, (s, _, d) in enumerate(g.edges) if s in kept and d in kept]
    return TextualGraph(
        {v: g.nodes[v] for v in keep},
        tuple(g.edges[i] for i in picked),
        tuple(g.edge_origin[i] for i in picked),
    )


def edge_subgraph(g: TextualGraph, keep: Iterable[int], edge_indices: Iterable[int]) -> TextualGraph:
    """Subgraph on ``keep`` holding only the listed edges (in stored order)."""
    keep = as_node_set(keep)
    _check_known(g, keep)
    chosen = sorted(set(edge_indices))
    kept = set(keep)
    for i in chosen:
        s, _, d = g.edges[i]
        if s not in kept or d not in kept:
            raise UnknownNode(f"edge {i} leaves the kept node set")
    return TextualGraph(
        {v: g.nodes[v] for v in keep},
        tuple(g.edges[i] for i in chosen),
        tuple(g.edge_origin[i] for i in chosen),
    )


def neighbors(g: TextualGraph, v: int) -> list:
    """First-order neighbours of ``v``, ignoring edge direction."""
    _check_known(g, [v])
    out = set()
    for s, _, d in g.edges:
        if s == v:
            out.add(d)
        if d == v:
            out.add(s)
    out.discard(v)
    return sorted(out)


def is_connected(g: TextualGraph, nodes=None, edge_indices=None) -> bool:
    """BFS connectivity over ``nodes`` using only ``edge_indices`` (default: all)."""
    nodes = set(g.nodes if nodes is None else nodes)
    if not nodes:
        return False
    idx = range(len(g.edges)) if edge_indices is None else edge_indices
    adj = {v: [] for v in nodes}
    for i in idx:
        s, _, d = g.edges[i]
        if s in adj and d in adj:
            adj[s].append(d)
            adj[d].append(s)
    start = min(nodes)
    seen = {start}
    stack = [start]
    while stack:
        for u in adj[stack.pop()]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen == nodes
