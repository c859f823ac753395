"""Answer scoring and graph/text alignment analysis."""
from __future__ import annotations

import csv
import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import cosine
from .errors import CheckpointMismatch, EmptyGold

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def split_candidates(prediction: str):
    """Candidate answers separated by newlines or semicolons, normalized, deduplicated."""
    out = []
    for part in re.split(r"[\n;]", prediction):
        norm = normalize_answer(part)
        if norm and norm not in out:
            out.append(norm)
    return out


def _matches(candidate, gold):
    # Gold must appear as a whole-token run inside the candidate.
    return f" {gold} " in f" {candidate} "


def exact_metrics(prediction: str, gold) -> dict:
    """Hit@1, set-F1 and exact-set accuracy of a prediction against gold answers."""
    golds = []
    for g in gold:
        norm = normalize_answer(g)
        if norm and norm not in golds:
            golds.append(norm)
    if not golds:
        raise EmptyGold("gold answer list is empty")
    cands = split_candidates(prediction)
    if not cands:
        return {"hit1": 0, "f1": 0.0, "accuracy": 0}
    hit1 = int(any(_matches(cands[0], g) for g in golds))
    precision = sum(any(_matches(c, g) for g in golds) for c in cands) / len(cands)
    recall = sum(any(_matches(c, g) for c in cands) for g in golds) / len(golds)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"hit1": hit1, "f1": f1, "accuracy": int(set(cands) == set(golds))}


@dataclass
class AlignmentProbe:
    """An example plus text vectors to compare its graph token against."""

    example: object
    targets: dict = field(default_factory=dict)


ANALYSIS_TARGETS = ("query", "rationale", "graph")
_SHARED_HYPER = ("hidden_dim", "n_layers", "target_dim", "root_weight")


def alignment_analysis(model_before, model_after, dataset):
    """Cosine between projected graph and projected text vectors, per example
    and target, for an unaligned and an aligned model."""
    for name in _SHARED_HYPER:
        if getattr(model_before, name) != getattr(model_after, name):
            raise CheckpointMismatch(f"models disagree on {name}")
    if model_before.n_features_in_ != model_after.n_features_in_:
        raise CheckpointMismatch("models disagree on input dimension")
    rows = []
    for i, probe in enumerate(dataset):
        ex = probe.example
        tokens = {}
        for label, model in (("unaligned", model_before), ("aligned", model_after)):
            tokens[label] = model.project(model.graph_vector(ex))
        for target in ANALYSIS_TARGETS:
            vec = probe.targets[target]
            row = {"id": ex.id if ex.id is not None else str(i), "index": i, "target": target}
            for label, model in (("unaligned", model_before), ("aligned", model_after)):
                row[label] = cosine(tokens[label], model.project(vec))
            rows.append(row)
    means = {}
    for target in ANALYSIS_TARGETS:
        sel = [r for r in rows if r["target"] == target]
        means[target] = {
            "unaligned": float(np.mean([r["unaligned"] for r in sel])) if sel else float("nan"),
            "aligned": float(np.mean([r["aligned"] for r in sel])) if sel else float("nan"),
        }
    return rows, means


def write_alignment_outputs(rows, means, out_dir, config_hash=""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "alignment.csv", "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "target", "unaligned", "aligned"])
        for r in rows:
            w.writerow([r["id"], r["target"], f"{r['unaligned']:.10f}", f"{r['aligned']:.10f}"])
    # One panel per target: (x, y, series) triples.
    for target in ANALYSIS_TARGETS:
        with open(out / f"alignment_plot_{target}.csv", "w", newline="") as fh:
            fh.write(f"# config_hash: {config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "series"])
            for r in rows:
                if r["target"] == target:
                    w.writerow([r["index"], f"{r['unaligned']:.10f}", "unaligned"])
                    w.writerow([r["index"], f"{r['aligned']:.10f}", "aligned"])
    (out / "alignment_summary.json").write_text(
        json.dumps({"config_hash": config_hash, "means": means}, indent=1, sort_keys=True) + "\n")
