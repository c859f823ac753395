"""Pipeline stages. Each stage reads the artifacts of earlier stages from the
output directory and writes its own; every artifact carries the config hash.

Output layout::

    ingest/manifest.jsonl        one line per question (graph digests)
    retrieve/subgraphs.jsonl     PCST node/edge selections
    extract/rationales.jsonl     grounded anchors and rationale steps
    train/model.ckpt             trained aligner (model_init.ckpt: untrained)
    train/loss_log.csv           step, L_NA, L_GA, total
    prune/pruned.jsonl           seeds, kept nodes/edges, node scores
    generate/bundles/<id>.json   generation bundles with graph tokens
    generate/predictions.jsonl   generator completions
    eval/records.csv, eval/summary.json
    analysis/alignment*.csv, analysis/alignment_summary.json
    sweep/results.csv, sweep/records.csv, sweep/heatmap_*.csv
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aligner import GraphAligner, example_from_table
from .embeddings import EmbeddingClient, load_embeddings
from .errors import EmptyDataset, MissingArtifact, NoGroundedAnchors, ParseFailure
from .graph import edge_subgraph, linearize, read_graph
from .llm import ChatGateway, RationaleBundle, extract_rationale, judge
from .metrics import AlignmentProbe, alignment_analysis, exact_metrics, write_alignment_outputs
from .refine import count_tokens, generate_answer, make_bundle, prune
from .retrieval import retrieve as retrieve_subgraph

log = logging.getLogger(__name__)

STAGES = ("ingest", "retrieve", "extract", "train-aligner", "prune", "generate", "eval",
          "analyze-alignment", "sweep")


@dataclass
class QAItem:
    id: str
    question: str
    answers: list
    graph: object
    table: object
    graph_dir: str = ""


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_corpus(corpus_dir):
    """Read ``questions.jsonl`` and each question's graph directory."""
    corpus_dir = Path(corpus_dir)
    qfile = corpus_dir / "questions.jsonl"
    if not qfile.exists():
        raise MissingArtifact(f"corpus has no questions.jsonl at {qfile}")
    items = []
    for line in qfile.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        gdir = corpus_dir / rec["graph"]
        graph = read_graph(gdir / "nodes.csv", gdir / "edges.csv")
        table = load_embeddings(gdir / "embeddings.bin", graph)
        if not rec["answers"]:
            raise ValueError(f"question {rec['id']} has no gold answers")
        items.append(QAItem(rec["id"], rec["question"], list(rec["answers"]), graph, table, rec["graph"]))
    return items


def build_gateway(config):
    g = config.gateway
    return ChatGateway(
        base_url=None if g.offline else g.base_url,
        model=g.model,
        fixture_dir=config.fixtures_dir / "llm",
        record=g.record,
        api_key_env=g.api_key_env,
    )


def build_embedder(config):
    g = config.gateway
    client = EmbeddingClient(fixture_dir=config.fixtures_dir / "embeddings",
                             base_url=g.embedding_url, record=g.record)
    if g.offline:
        client.base_url = None
    return client


class Context:
    """Config plus the output directory and the external-service clients."""

    def __init__(self, config, out_dir=None, gateway=None, embedder=None):
        self.config = config
        self.out = Path(out_dir) if out_dir is not None else config.output_dir
        self.gateway = gateway if gateway is not None else build_gateway(config)
        self.embedder = embedder if embedder is not None else build_embedder(config)
        self.hash = config.config_hash()

    @property
    def llm_params(self):
        g = self.config.gateway
        return {"temperature": g.temperature, "max_tokens": g.max_tokens}

    def path(self, *parts):
        return self.out.joinpath(*parts)

    def require(self, *parts):
        p = self.path(*parts)
        if not p.exists():
            raise MissingArtifact(f"missing artifact {'/'.join(parts)}; run the producing stage first")
        return p

    def new_aligner(self, steps=None):
        a = self.config.aligner
        return GraphAligner(hidden_dim=a.hidden_dim, n_layers=a.n_layers, target_dim=a.target_dim,
                            temperature=a.temperature, steps=steps or a.steps,
                            batch_size=a.batch_size, learning_rate=a.learning_rate,
                            random_state=a.seed, root_weight=a.root_weight)


# -- artifact io ---------------------------------------------------------------
def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def write_csv(path, header, rows, config_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return f"{x:.10f}" if isinstance(x, float) else x


# -- in-memory steps (shared by stages and sweeps) -------------------------------
def retrieve_items(ctx, items, k=None):
    r = ctx.config.retrieval
    out = {}
    for item in items:
        q = ctx.embedder.embed(item.question)
        out[item.id] = retrieve_subgraph(item.graph, item.table, q, k or r.k, r.edge_cost, r.mode)
    return out


def retrieved_graph(item, sub):
    return edge_subgraph(item.graph, sub["nodes"] if isinstance(sub, dict) else sub.nodes,
                         sub["edge_indices"] if isinstance(sub, dict) else sub.edge_indices)


def extract_items(ctx, items, graphs):
    out = {}
    for item in items:
        try:
            out[item.id] = extract_rationale(item.question, item.answers, graphs[item.id],
                                             ctx.gateway, **ctx.llm_params)
        except (ParseFailure, NoGroundedAnchors) as exc:
            log.warning("extraction failed for %s: %s", item.id, exc)
            out[item.id] = exc
    return out


def training_examples(ctx, items, graphs, rationales):
    examples = []
    for item in items:
        bundle = rationales.get(item.id)
        if not isinstance(bundle, RationaleBundle):
            continue
        q, anchor, rationale = ctx.embedder.embed_many(
            [item.question, bundle.anchor_text(), bundle.rationale_text()])
        examples.append(example_from_table(graphs[item.id], item.table, q, anchor, rationale, item.id))
    if not examples:
        raise EmptyDataset("no question produced a usable rationale")
    return examples


def prune_items(ctx, model, items, graphs, n_seed=None):
    out = {}
    for item in items:
        g_r = graphs[item.id]
        ex = example_from_table(g_r, item.table, ctx.embedder.embed(item.question))
        scores = model.predict_proba(ex)
        out[item.id] = (prune(g_r, scores, n_seed or ctx.config.prune.n_seed), scores)
    return out


# -- stages ----------------------------------------------------------------------
def stage_ingest(ctx):
    items = load_corpus(ctx.config.corpus_dir)
    rows = []
    for item in items:
        gdir = ctx.config.corpus_dir / item.graph_dir
        rows.append({
            "config_hash": ctx.hash,
            "id": item.id,
            "question": item.question,
            "answers": item.answers,
            "graph": item.graph_dir,
            "n_nodes": len(item.graph),
            "n_edges": len(item.graph.edges),
            "digests": {name: _sha256(gdir / name) for name in ("nodes.csv", "edges.csv", "embeddings.bin")},
        })
    write_jsonl(ctx.path("ingest", "manifest.jsonl"), rows)
    return rows


def ingested_items(ctx):
    manifest = read_jsonl(ctx.require("ingest", "manifest.jsonl"))
    items = []
    for rec in manifest:
        gdir = ctx.config.corpus_dir / rec["graph"]
        for name, digest in rec["digests"].items():
            if not (gdir / name).exists() or _sha256(gdir / name) != digest:
                raise MissingArtifact(f"corpus file {rec['graph']}/{name} changed since ingest; re-run ingest")
        graph = read_graph(gdir / "nodes.csv", gdir / "edges.csv")
        items.append(QAItem(rec["id"], rec["question"], rec["answers"], graph,
                            load_embeddings(gdir / "embeddings.bin", graph), rec["graph"]))
    return items


def stage_retrieve(ctx):
    items = ingested_items(ctx)
    subs = retrieve_items(ctx, items)
    write_jsonl(ctx.path("retrieve", "subgraphs.jsonl"),
                [{"config_hash": ctx.hash, "id": i.id, **subs[i.id].to_dict()} for i in items])
    return subs


def _retrieved(ctx, items):
    rows = {r["id"]: r for r in read_jsonl(ctx.require("retrieve", "subgraphs.jsonl"))}
    missing = [i.id for i in items if i.id not in rows]
    if missing:
        raise MissingArtifact(f"retrieve/subgraphs.jsonl lacks question {missing[0]}")
    return {i.id: retrieved_graph(i, rows[i.id]) for i in items}


def stage_extract(ctx):
    items = ingested_items(ctx)
    graphs = _retrieved(ctx, items)
    results = extract_items(ctx, items, graphs)
    rows = []
    for item in items:
        res = results[item.id]
        if isinstance(res, RationaleBundle):
            rows.append({"config_hash": ctx.hash, "id": item.id, **res.to_dict()})
        else:
            rows.append({"config_hash": ctx.hash, "id": item.id, "error": res.code, "message": str(res)})
    write_jsonl(ctx.path("extract", "rationales.jsonl"), rows)
    return results


def _rationales(ctx):
    out = {}
    for r in read_jsonl(ctx.require("extract", "rationales.jsonl")):
        out[r["id"]] = RationaleBundle.from_dict(r) if "error" not in r else None
    return out


def stage_train(ctx):
    items = ingested_items(ctx)
    graphs = _retrieved(ctx, items)
    examples = training_examples(ctx, items, graphs, _rationales(ctx))
    model = ctx.new_aligner().fit(examples)
    init = ctx.new_aligner().initialize(examples[0].dim)
    ctx.path("train").mkdir(parents=True, exist_ok=True)
    model.save(ctx.path("train", "model.ckpt"), {"config_hash": ctx.hash})
    init.save(ctx.path("train", "model_init.ckpt"), {"config_hash": ctx.hash})
    write_csv(ctx.path("train", "loss_log.csv"), ["step", "L_NA", "L_GA", "total"],
              [[s, _fmt(a), _fmt(b), _fmt(c)] for s, a, b, c in model.loss_log_], ctx.hash)
    return model


def _model(ctx, name="model.ckpt"):
    return GraphAligner.load(ctx.require("train", name))


def stage_prune(ctx):
    items = ingested_items(ctx)
    graphs = _retrieved(ctx, items)
    pruned = prune_items(ctx, _model(ctx), items, graphs)
    rows = []
    for item in items:
        p, scores = pruned[item.id]
        rows.append({
            "config_hash": ctx.hash,
            "id": item.id,
            "seeds": p.seeds,
            "nodes": p.graph.node_ids,
            "edge_indices": list(p.graph.edge_origin),
            "scores": [float(s) for s in scores],
        })
    write_jsonl(ctx.path("prune", "pruned.jsonl"), rows)
    return pruned


def stage_generate(ctx):
    from .refine import PrunedSubgraph

    items = ingested_items(ctx)
    model = _model(ctx)
    rows = {r["id"]: r for r in read_jsonl(ctx.require("prune", "pruned.jsonl"))}
    preds = []
    bundle_dir = ctx.path("generate", "bundles")
    bundle_dir.mkdir(parents=True, exist_ok=True)
    for item in items:
        if item.id not in rows:
            raise MissingArtifact(f"prune/pruned.jsonl lacks question {item.id}")
        rec = rows[item.id]
        pruned = PrunedSubgraph(rec["seeds"], edge_subgraph(item.graph, rec["nodes"], rec["edge_indices"]))
        bundle = make_bundle(model, pruned, item.table, item.question)
        payload = bundle.to_dict()
        payload["config_hash"] = ctx.hash
        (bundle_dir / f"{item.id}.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
        answer = generate_answer(bundle, ctx.gateway, **ctx.llm_params)
        preds.append({"config_hash": ctx.hash, "id": item.id, "prediction": answer,
                      "token_count": bundle.token_count})
    write_jsonl(ctx.path("generate", "predictions.jsonl"), preds)
    return preds


def stage_eval(ctx):
    items = ingested_items(ctx)
    preds = {r["id"]: r for r in read_jsonl(ctx.require("generate", "predictions.jsonl"))}
    rationales = _rationales(ctx) if ctx.config.eval.judge else {}
    rows, records = [], []
    for item in items:
        if item.id not in preds:
            raise MissingArtifact(f"generate/predictions.jsonl lacks question {item.id}")
        p = preds[item.id]
        m = exact_metrics(p["prediction"], item.answers)
        labels = ["", ""]
        bundle = rationales.get(item.id)
        if bundle is not None:
            labels = [judge(item.question, bundle, kind, ctx.gateway, **ctx.llm_params)
                      for kind in ("relevance", "faithfulness")]
        records.append({"id": item.id, **m, "token_count": p["token_count"]})
        rows.append([item.id, m["hit1"], _fmt(float(m["f1"])), m["accuracy"], p["token_count"], *labels])
    write_csv(ctx.path("eval", "records.csv"),
              ["id", "hit1", "f1", "accuracy", "token_count", "relevance", "faithfulness"], rows, ctx.hash)
    summary = {
        "config_hash": ctx.hash,
        "n": len(records),
        **{k: float(np.mean([r[k] for r in records])) for k in ("hit1", "f1", "accuracy", "token_count")},
    }
    ctx.path("eval", "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def stage_analyze(ctx):
    items = ingested_items(ctx)
    graphs = _retrieved(ctx, items)
    rationales = _rationales(ctx)
    before, after = _model(ctx, "model_init.ckpt"), _model(ctx)
    probes = []
    for item in items:
        bundle = rationales.get(item.id)
        if bundle is None:
            continue
        g_r = graphs[item.id]
        q, rat, text = ctx.embedder.embed_many([item.question, bundle.rationale_text(), linearize(g_r)])
        probes.append(AlignmentProbe(example_from_table(g_r, item.table, q, id=item.id),
                                     {"query": q, "rationale": rat, "graph": text}))
    rows, means = alignment_analysis(before, after, probes)
    write_alignment_outputs(rows, means, ctx.path("analysis"), ctx.hash)
    return rows, means


def stage_sweep(ctx):
    from .sweep import sweep, write_sweep_outputs

    items = ingested_items(ctx)
    grid = {"n_seed": ctx.config.sweep.n_seed, "align_steps": ctx.config.sweep.align_steps,
            "top_k": ctx.config.sweep.top_k}
    result = sweep(grid, ctx, items)
    write_sweep_outputs(result, ctx.path("sweep"), ctx.hash)
    return result


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "retrieve": stage_retrieve,
    "extract": stage_extract,
    "train-aligner": stage_train,
    "prune": stage_prune,
    "generate": stage_generate,
    "eval": stage_eval,
    "analyze-alignment": stage_analyze,
    "sweep": stage_sweep,
}


def unpruned_token_count(item, g_r):
    """Token count of the generator prompt built from the unpruned retrieved subgraph."""
    from .llm import render_prompt

    return count_tokens(render_prompt("generator_qa", graph=linearize(g_r), question=item.question))
