import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphalign.errors import DanglingEdge, DuplicateNodeId, MalformedRow, UnknownNode
from graphalign.graph import (
    TextualGraph,
    edge_subgraph,
    induced_subgraph,
    is_connected,
    linearize,
    load_graph,
    load_linearized,
    neighbors,
    read_graph,
    write_graph,
)

from conftest import path_graph


def test_dangling_edge_rows():
    nodes = "node_id,node_attr\n0,harry potter and the chamber of secrets\n1,harry potter and the philosopher's stone\n"
    edges = "src,edge_attr,dst\n1,book.book.genre,224\n"
    with pytest.raises(DanglingEdge):
        load_graph(nodes, edges)


def test_empty_edge_table():
    g = load_graph("node_id,node_attr\n0,a\n1,b\n2,c\n", "")
    assert len(g) == 3 and g.edges == ()
    g2 = load_graph("node_id,node_attr\n0,a\n1,b\n2,c\n", "src,edge_attr,dst\n")
    assert g2 == g


def test_reload_is_byte_identical():
    nodes, edges = "node_id,node_attr\n0,x\n1,y\n", "src,edge_attr,dst\n0,rel,1\n"
    assert linearize(load_graph(nodes, edges)) == linearize(load_graph(nodes, edges))


@pytest.mark.parametrize("nodes,edges,err", [
    ("node_id,node_attr\n0,a,extra\n", "", MalformedRow),
    ("node_id,node_attr\nzero,a\n", "", MalformedRow),
    ("node_id,node_attr\n-1,a\n", "", MalformedRow),
    ("id,text\n0,a\n", "", MalformedRow),
    ("node_id,node_attr\n0,a\n0,b\n", "", DuplicateNodeId),
    ("node_id,node_attr\n0,a\n", "src,edge_attr,dst\n0,r\n", MalformedRow),
])
def test_load_errors(nodes, edges, err):
    with pytest.raises(err):
        load_graph(nodes, edges)


def test_edge_order_preserved_and_nodes_sorted():
    g = load_graph("node_id,node_attr\n5,e\n2,b\n", "src,edge_attr,dst\n5,z,2\n2,a,5\n")
    assert g.node_ids == [2, 5]
    assert [e[1] for e in g.edges] == ["z", "a"]


def test_induced_subgraph_examples():
    g = path_graph(4)
    sub = induced_subgraph(g, {0, 1})
    assert sub.node_ids == [0, 1] and sub.edges == ((0, "r", 1),)
    assert induced_subgraph(g, g.node_ids) == g
    g3 = path_graph(3)
    sub = induced_subgraph(g3, {0, 2})
    assert len(sub) == 2 and sub.edges == ()
    with pytest.raises(UnknownNode):
        induced_subgraph(g3, {0, 9})


def test_subgraph_edge_origin_composes():
    g = path_graph(5)
    a = induced_subgraph(g, {1, 2, 3, 4})
    assert a.edge_origin == (1, 2, 3)
    b = induced_subgraph(a, {3, 4})
    assert b.edge_origin == (3,)
    c = edge_subgraph(g, {2, 3, 4}, [3])
    assert c.edges == ((3, "r", 4),) and c.edge_origin == (3,)


def test_neighbors_examples():
    g = path_graph(3)
    assert neighbors(g, 1) == [0, 2]
    iso = TextualGraph({0: "a", 1: "b"})
    assert neighbors(iso, 0) == []
    multi = TextualGraph({0: "a", 1: "b"}, ((0, "r1", 1), (0, "r2", 1)))
    assert neighbors(multi, 0) == [1]
    with pytest.raises(UnknownNode):
        neighbors(g, 7)


def test_linearize_minimal():
    assert linearize(TextualGraph({0: "a"})) == "node_id,node_attr\n0,a\nsrc,edge_attr,dst\n"


def test_linearize_layout_on_novel_fixture(novel_graph):
    text = linearize(novel_graph)
    lines = text.splitlines()
    assert lines[0] == "node_id,node_attr"
    assert lines[1] == "0,harry potter and the chamber of secrets"
    assert "3,j. k. rowling" in lines
    k = lines.index("src,edge_attr,dst")
    assert lines[k + 1] == "16,freebase.equivalent_topic.equivalent_domain,91"
    assert lines[k + 5] == "3,book.author.works_written,670"


def test_comma_text_round_trips(tmp_path):
    g = TextualGraph({0: "rowling, j. k.", 1: 'say "hi"', 2: ""}, ((0, "a,b", 1),))
    assert "\"rowling, j. k.\"" in linearize(g)
    assert load_linearized(linearize(g)) == g
    write_graph(g, tmp_path / "n.csv", tmp_path / "e.csv")
    assert read_graph(tmp_path / "n.csv", tmp_path / "e.csv") == g


def test_is_connected():
    g = path_graph(4)
    assert is_connected(g, [0, 1, 2], [0, 1])
    assert not is_connected(g, [0, 1, 2], [0])
    assert not is_connected(g, [0, 2], [])


text_st = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\x00"), max_size=12)


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 7))
    texts = draw(st.lists(text_st, min_size=n, max_size=n))
    ids = draw(st.lists(st.integers(0, 50), min_size=n, max_size=n, unique=True))
    m = draw(st.integers(0, 8))
    edges = tuple((draw(st.sampled_from(ids)), draw(text_st), draw(st.sampled_from(ids))) for _ in range(m))
    return TextualGraph(dict(zip(ids, texts)), edges)


@settings(max_examples=80, deadline=None)
@given(graphs())
def test_linearize_fixed_point(g):
    again = load_linearized(linearize(g))
    assert again == g
    assert linearize(again) == linearize(g)


@settings(max_examples=60, deadline=None)
@given(graphs(), st.data())
def test_neighbors_symmetric_and_induced_monotone(g, data):
    for v in g.nodes:
        for u in neighbors(g, v):
            assert v in neighbors(g, u)
    small = data.draw(st.sets(st.sampled_from(g.node_ids)))
    big = small | data.draw(st.sets(st.sampled_from(g.node_ids)))
    e_small = set(induced_subgraph(g, small).edge_origin)
    e_big = set(induced_subgraph(g, big).edge_origin)
    assert e_small <= e_big
