from pathlib import Path

import numpy as np
import pytest

from graphalign.graph import TextualGraph, read_graph

FIXTURES = Path(__file__).parent / "fixtures"
NOVEL_QUESTION = "what is the name of the first harry potter novel?"
NOVEL_ANSWER = "harry potter and the philosopher's stone"


def path_graph(n, rel="r"):
    return TextualGraph({v: f"n{v}" for v in range(n)}, tuple((v, rel, v + 1) for v in range(n - 1)))


def random_connected_graph(rng, n, extra_edges=0):
    edges = [(int(rng.integers(0, v)), f"r{v}", v) for v in range(1, n)]
    for _ in range(extra_edges if n > 1 else 0):
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        edges.append((a, "x", b))
    return TextualGraph({v: f"node {v}" for v in range(n)}, tuple(edges))


@pytest.fixture
def novel_graph():
    return read_graph(FIXTURES / "novel" / "nodes.csv", FIXTURES / "novel" / "edges.csv")


@pytest.fixture
def novel_llm_dir():
    return FIXTURES / "novel" / "llm"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
