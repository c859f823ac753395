import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphalign.aligner import GraphAligner
from graphalign.config import load_config
from graphalign.errors import CheckpointMismatch, ConfigInvalid, EmptyGold
from graphalign.llm import ChatGateway
from graphalign.metrics import (
    AlignmentProbe,
    alignment_analysis,
    exact_metrics,
    normalize_answer,
    split_candidates,
    write_alignment_outputs,
)
from graphalign.pipeline import Context, load_corpus
from graphalign.sweep import heatmap, sweep, write_sweep_outputs
from graphalign.synthetic import make_alignment_dataset
from graphalign.toy import toy_dir


def test_exact_metrics_examples():
    m = exact_metrics("Harry Potter and the Philosopher's Stone", ["harry potter and the philosopher's stone"])
    assert m == {"hit1": 1, "f1": 1.0, "accuracy": 1}
    m = exact_metrics("x; y", ["y", "z"])
    assert m["hit1"] == 0 and m["f1"] == pytest.approx(0.5) and m["accuracy"] == 0
    assert exact_metrics("", ["paris"]) == {"hit1": 0, "f1": 0.0, "accuracy": 0}
    with pytest.raises(EmptyGold):
        exact_metrics("a", [])
    with pytest.raises(EmptyGold):
        exact_metrics("a", ["the"])  # nothing left after dropping articles


def test_normalization_and_splitting():
    assert normalize_answer("  The  Lord, of the RINGS! ") == "lord of rings"
    assert split_candidates("Paris\nLyon; paris;\n") == ["paris", "lyon"]
    # a gold answer embedded as a whole-token run counts as a hit
    assert exact_metrics("The answer is Paris.", ["paris"])["hit1"] == 1
    assert exact_metrics("Parisian", ["paris"])["hit1"] == 0


words = st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta", "the", "x"]), min_size=1, max_size=3)
answer = words.filter(lambda w: set(w) != {"the"}).map(" ".join)


@given(st.lists(answer, min_size=1, max_size=4), st.lists(answer, min_size=1, max_size=4), st.randoms())
def test_metric_properties(pred, gold, rnd):
    text = ";".join(pred)
    m = exact_metrics(text, gold)
    assert m["hit1"] in (0, 1) and m["accuracy"] in (0, 1) and 0 <= m["f1"] <= 1
    if m["hit1"]:
        assert m["f1"] > 0
    if m["accuracy"]:
        assert m["f1"] == pytest.approx(1.0)
    shuffled = list(gold)
    rnd.shuffle(shuffled)
    assert exact_metrics(text, shuffled) == m
    assert exact_metrics(text.upper().replace(" ", " , "), gold) == m


def _probes(examples):
    return [AlignmentProbe(ex, {"query": ex.query_vec, "rationale": ex.rationale_vec,
                                "graph": ex.node_feats.mean(axis=0)}) for ex in examples]


def _aligner(**kw):
    hyper = dict(hidden_dim=32, n_layers=2, target_dim=32, learning_rate=1e-2, steps=60, root_weight=True)
    hyper.update(kw)
    return GraphAligner(**hyper)


def test_alignment_analysis_identity_and_shape(tmp_path):
    data, _ = make_alignment_dataset(6, dim=8, seed=1)
    model = _aligner().initialize(8)
    rows, means = alignment_analysis(model, model, _probes(data))
    assert len(rows) == 6 * 3
    assert all(r["aligned"] == r["unaligned"] for r in rows)
    write_alignment_outputs(rows, means, tmp_path, "abc")
    with open(tmp_path / "alignment.csv") as fh:
        assert fh.readline() == "# config_hash: abc\n"
        assert len(list(csv.reader(fh))) == 1 + 18
    for target in ("query", "rationale", "graph"):
        assert (tmp_path / f"alignment_plot_{target}.csv").exists()
    assert json.loads((tmp_path / "alignment_summary.json").read_text())["config_hash"] == "abc"


def test_alignment_analysis_checkpoint_mismatch():
    a = _aligner().initialize(8)
    with pytest.raises(CheckpointMismatch):
        alignment_analysis(a, _aligner(hidden_dim=16).initialize(8), [])
    with pytest.raises(CheckpointMismatch):
        alignment_analysis(a, _aligner().initialize(9), [])


def test_alignment_improves_when_rationale_is_pooled_input():
    data, _ = make_alignment_dataset(120, dim=16, seed=3, rationale_noise=0.0)
    train, test = data[:90], data[90:]
    before = _aligner().initialize(16)
    trend = []
    for steps in (60, 240):
        _, means = alignment_analysis(before, _aligner(steps=steps).fit(train), _probes(test))
        trend.append(means["rationale"]["aligned"])
    assert means["rationale"]["unaligned"] < trend[0] < trend[1]
    assert trend[1] > 0.8


# -- sweeps over the shipped toy set -------------------------------------------------
@pytest.fixture(scope="module")
def toy_ctx(tmp_path_factory):
    cfg = load_config(toy_dir() / "config.json")
    return Context(cfg, out_dir=tmp_path_factory.mktemp("sweep"))


@pytest.fixture(scope="module")
def toy_items(toy_ctx):
    return load_corpus(toy_ctx.config.corpus_dir)


def test_sweep_2x2_grid(toy_ctx, toy_items, tmp_path):
    grid = {"n_seed": [2, 4], "align_steps": [20, 60]}
    result = sweep(grid, toy_ctx, toy_items)
    assert len(result.rows) == 4 and all(r["error"] == "" for r in result.rows)
    assert len(result.records) == 4 * len(toy_items)
    by_key = {(r["n_seed"], r["align_steps"], r["id"]): r["token_count"] for r in result.records}
    for steps in (20, 60):
        for item in toy_items:
            assert by_key[(2, steps, item.id)] <= by_key[(4, steps, item.id)]
    seeds, steps, matrix = heatmap(result.rows, "hit1", 10)
    assert seeds == [2, 4] and steps == [20, 60] and all(v is not None for row in matrix for v in row)
    again = sweep(grid, toy_ctx, toy_items)
    assert again.rows == result.rows and again.records == result.records
    write_sweep_outputs(result, tmp_path, "h")
    assert (tmp_path / "heatmap_token_count_k10.csv").exists()
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 2 + 4


def test_sweep_failing_cell_is_isolated(toy_ctx, toy_items):
    # n_seed=1 was never recorded, so its generation prompts miss the fixtures.
    result = sweep({"n_seed": [4, 1], "align_steps": [60]}, toy_ctx, toy_items)
    rows = {r["n_seed"]: r for r in result.rows}
    assert rows[4]["error"] == "" and rows[4]["hit1"] is not None
    assert rows[1]["error"] == "FixtureMiss" and rows[1]["hit1"] is None


def test_sweep_preconditions(toy_ctx, toy_items):
    with pytest.raises(ConfigInvalid):
        sweep({}, toy_ctx, toy_items)
    with pytest.raises(ConfigInvalid):
        sweep({"n_seed": [0]}, toy_ctx, toy_items)
    with pytest.raises(ConfigInvalid):
        sweep({"depth": [1]}, toy_ctx, toy_items)
    live = Context(toy_ctx.config, out_dir=toy_ctx.out, gateway=ChatGateway(backend=lambda p: ""))
    with pytest.raises(ConfigInvalid):
        sweep({"n_seed": [1]}, live, toy_items)
