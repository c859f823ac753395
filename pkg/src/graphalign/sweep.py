"""Grid sweeps over seed count, aligner steps and retrieval top-k."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, GraphAlignError
from .metrics import exact_metrics
from .refine import generate_answer, make_bundle

log = logging.getLogger(__name__)

GRID_KEYS = ("n_seed", "align_steps", "top_k")
METRICS = ("hit1", "f1", "accuracy", "token_count")


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)      # one per grid cell
    records: list = field(default_factory=list)   # one per cell and example


def _check_grid(grid):
    if not grid:
        raise ConfigInvalid("sweep grid is empty")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown sweep axes: {sorted(unknown)}")
    for key, values in grid.items():
        if not values or any(not isinstance(v, int) or v < 1 for v in values):
            raise ConfigInvalid(f"sweep axis {key} needs a non-empty list of integers >= 1")


def sweep(grid, ctx, items=None):
    """Run prune/generate/eval for every cell of ``grid``.

    Axes missing from ``grid`` take the single value from the config.
    Retrieval and extraction are cached per top-k, aligner training per
    (top-k, steps). A failing cell is recorded with its error code and the
    sweep moves on.
    """
    from . import pipeline as P

    _check_grid(grid)
    if getattr(ctx.gateway, "fixture_dir", None) is None:
        raise ConfigInvalid("sweeps need a fixture-backed gateway")
    cfg = ctx.config
    axes = {
        "n_seed": list(grid.get("n_seed", [cfg.prune.n_seed])),
        "align_steps": list(grid.get("align_steps", [cfg.aligner.steps])),
        "top_k": list(grid.get("top_k", [cfg.retrieval.k])),
    }
    if items is None:
        items = P.load_corpus(cfg.corpus_dir)
    result = SweepResult()
    stage_cache = {}

    def upstream(top_k, steps):
        # Returns (graphs, model) or raises; failures are cached too.
        key = (top_k, steps)
        if key not in stage_cache:
            try:
                if top_k not in stage_cache:
                    subs = P.retrieve_items(ctx, items, k=top_k)
                    graphs = {i.id: P.retrieved_graph(i, subs[i.id]) for i in items}
                    rationales = P.extract_items(ctx, items, graphs)
                    examples = P.training_examples(ctx, items, graphs, rationales)
                    stage_cache[top_k] = (graphs, examples)
                graphs, examples = stage_cache[top_k]
                stage_cache[key] = (graphs, ctx.new_aligner(steps=steps).fit(examples))
            except GraphAlignError as exc:
                stage_cache[key] = exc
        hit = stage_cache[key]
        if isinstance(hit, Exception):
            raise hit
        return hit

    for top_k, steps, n_seed in itertools.product(axes["top_k"], axes["align_steps"], axes["n_seed"]):
        cell = {"n_seed": n_seed, "align_steps": steps, "top_k": top_k}
        try:
            graphs, model = upstream(top_k, steps)
            pruned = P.prune_items(ctx, model, items, graphs, n_seed=n_seed)
            recs = []
            for item in items:
                bundle = make_bundle(model, pruned[item.id][0], item.table, item.question)
                answer = generate_answer(bundle, ctx.gateway, **ctx.llm_params)
                recs.append({**cell, "id": item.id, **exact_metrics(answer, item.answers),
                             "token_count": bundle.token_count})
        except GraphAlignError as exc:
            log.warning("sweep cell %s failed: %s", cell, exc)
            result.rows.append({**cell, **{m: None for m in METRICS}, "error": exc.code})
            continue
        result.records.extend(recs)
        result.rows.append({**cell, **{m: float(np.mean([r[m] for r in recs])) for m in METRICS},
                            "error": ""})
    return result


def _cell(v):
    if v is None:
        return ""
    return f"{v:.10f}" if isinstance(v, float) else v


def heatmap(rows, metric, top_k):
    """Matrix of ``metric`` with n_seed down the rows and align_steps across."""
    sel = [r for r in rows if r["top_k"] == top_k]
    seeds = sorted({r["n_seed"] for r in sel})
    steps = sorted({r["align_steps"] for r in sel})
    lookup = {(r["n_seed"], r["align_steps"]): r[metric] for r in sel}
    return seeds, steps, [[lookup.get((s, a)) for a in steps] for s in seeds]


def write_sweep_outputs(result, out_dir, config_hash=""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = list(GRID_KEYS) + list(METRICS) + ["error"]
    with open(out / "results.csv", "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in result.rows:
            w.writerow([_cell(r[h]) for h in header])
    with open(out / "records.csv", "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = list(GRID_KEYS) + ["id"] + list(METRICS)
        w.writerow(cols)
        for r in result.records:
            w.writerow([_cell(float(r[c]) if c == "f1" else r[c]) for c in cols])
    for top_k in sorted({r["top_k"] for r in result.rows}):
        for metric in METRICS:
            seeds, steps, matrix = heatmap(result.rows, metric, top_k)
            with open(out / f"heatmap_{metric}_k{top_k}.csv", "w", newline="") as fh:
                fh.write(f"# config_hash: {config_hash}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["n_seed"] + [f"steps={a}" for a in steps])
                for s, row in zip(seeds, matrix):
                    w.writerow([s] + [_cell(v) for v in row])
