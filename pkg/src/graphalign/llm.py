"""Prompt templates, a chat-completions gateway with fixture replay, and
anchor/rationale parsing and grounding."""
from __future__ import annotations

import hashlib
import logging
import os
import re
import string
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    FixtureMiss,
    JudgeUnparseable,
    MissingSlot,
    NoGroundedAnchors,
    ParseFailure,
    ProviderUnavailable,
    RateLimited,
    UnknownTemplate,
)
from .graph import TextualGraph, linearize

log = logging.getLogger(__name__)

TEMPLATES = {
    "extraction": """You are a helpful assistant for anchor and rationale extraction from graph evidence.

Inputs: a question, its answer, and a textualized graph database (nodes/edges described in text).
Goal: extract (1) a rationale chain that links the question to the answer using graph evidence, and (2) a small set of anchors (key intermediate entities/relations) that can be grounded to graph nodes/edges.

Definitions:
- Rationale chain: an ordered list of short reasoning steps. Each step should mention the evidence used and move closer to the answer.
- Anchors: reasoning-critical intermediate entities/relations that appear in the graph database and are necessary for the reasoning.

Constraints:
- Use only information supported by the provided graph database and the given answer.
- Anchors must be verbatim spans from the graph database (copy exact surface forms).
- Keep each rationale step concise.

Output format (follow exactly):
1. RationaleChain: a numbered list of steps (3-6 steps).
2. Anchors: a bullet list of anchors. For each anchor, provide its type (entity or relation) and the copied span.

Question: {question}

Answer: {answer}

Graph DataBase: {graph}

Now produce the output.""",
    "generator_qa": """Textualized Graph: {graph}.

Please answer the given question.
Question: {question}

Answer:""",
    "generator_explagraphs": """Textualized Graph: {graph}.

Argument 1: {arg1}

Argument 2: {arg2}

Question: Do argument 1 and argument 2 support or counter each other? Answer in one word in the form of 'support' or 'counter'.

Answer:""",
    "judge_relevance": """Evaluate the relevance of the anchor and rationale in answering the QUESTION. The relevant anchor and rationale contain information that helps answer the question, even if partially. Return one of the following labels: 'Relevant', or 'Irrelevant' without any additional response.

QUESTION: {question}

Anchors: {anchors}

Rationale: {rationale}""",
    "judge_faithfulness": """Evaluate the following anchor and rationale for faithfulness in answering the QUESTION. A faithful response should include information that helps answer the question, even if partially, avoid inventing new details, and not contradict the context. Return one of the following labels: 'Faithful' or 'Not Faithful' without any additional response.

QUESTION: {question}

Anchors: {anchors}

Rationale: {rationale}""",
}

REPROMPT_BUDGET = 2
REPROMPT_NOTE = ("\n\nYour previous reply could not be parsed (retry {n}). Reply with a "
                 "'RationaleChain:' section and an 'Anchors:' section exactly as specified.")


def template_slots(template_id):
    if template_id not in TEMPLATES:
        raise UnknownTemplate(f"unknown template {template_id!r}")
    return [name for _, name, _, _ in string.Formatter().parse(TEMPLATES[template_id]) if name]


def render_prompt(template_id: str, **slots) -> str:
    needed = template_slots(template_id)
    missing = [s for s in needed if slots.get(s) is None]
    if missing:
        raise MissingSlot(f"template {template_id!r} needs slot {missing[0]!r}")
    return TEMPLATES[template_id].format(**{s: slots[s] for s in needed})


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ChatGateway:
    """OpenAI-style chat-completions client with fixture replay.

    Lookup order is the fixture directory (``<sha256(prompt)>.txt``), then
    a local ``backend`` callable, then the HTTP service at ``base_url``.
    Without a backend or URL the gateway is offline and unknown prompts
    raise :class:`FixtureMiss`. With ``record=True`` fresh completions are
    written back to the fixture directory.
    """

    def __init__(self, base_url=None, model="meta-llama/Llama-3.1-70B-Instruct", fixture_dir=None,
                 backend=None, record=False, api_key_env="GRAPHALIGN_API_KEY", transport=None,
                 max_attempts=5, backoff=0.5, timeout=60.0, sleep=time.sleep):
        self.base_url = base_url
        self.model = model
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.backend = backend
        self.record = record
        self.api_key_env = api_key_env
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.sleep = sleep

    @property
    def offline(self):
        return self.backend is None and self.base_url is None

    def complete(self, prompt, temperature=0.0, max_tokens=512, model=None):
        key = prompt_key(prompt)
        if self.fixture_dir is not None:
            path = self.fixture_dir / f"{key}.txt"
            if path.exists():
                return path.read_bytes().decode("utf-8")
        if self.backend is not None:
            text = self.backend(prompt)
        elif self.base_url is not None:
            text = self._post(prompt, temperature, max_tokens, model or self.model)
        else:
            raise FixtureMiss(f"no recorded completion for prompt {key[:12]}")
        if self.record and self.fixture_dir is not None:
            self.fixture_dir.mkdir(parents=True, exist_ok=True)
            (self.fixture_dir / f"{key}.txt").write_bytes(text.encode("utf-8"))
        return text

    def _post(self, prompt, temperature, max_tokens, model):
        import httpx

        url = self.base_url.rstrip("/") + "/v1/chat/completions"
        payload = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with httpx.Client(transport=self.transport, timeout=self.timeout) as client:
                    resp = client.post(url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last = ProviderUnavailable(f"chat service unreachable: {exc}")
                continue
            if resp.status_code == 429:
                last = RateLimited(f"rate limited after {attempt + 1} attempt(s)")
                continue
            if resp.status_code >= 500:
                last = ProviderUnavailable(f"chat service returned HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(f"chat service returned HTTP {resp.status_code}")
            choices = resp.json().get("choices") or []
            if not choices:
                raise ProviderUnavailable("chat service returned no choices")
            return str((choices[0].get("message") or {}).get("content") or "")
        raise last


@dataclass
class Anchor:
    kind: str
    span: str
    grounded_ids: list = field(default_factory=list)


@dataclass
class RationaleBundle:
    steps: list
    anchors: list

    def anchor_text(self):
        return "; ".join(a.span for a in self.anchors)

    def rationale_text(self):
        return "\n".join(self.steps)

    def to_dict(self):
        return {
            "steps": list(self.steps),
            "anchors": [{"kind": a.kind, "span": a.span, "grounded_ids": list(a.grounded_ids)}
                        for a in self.anchors],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["steps"]), [Anchor(a["kind"], a["span"], list(a["grounded_ids"]))
                                      for a in d["anchors"]])


_CHAIN_HEAD = re.compile(r"^[\s#*\d.)-]*rationale\s*chain\W*(.*)$", re.I)
_ANCHOR_HEAD = re.compile(r"^[\s#*\d.)-]*anchors\b[\s*:]*(.*)$", re.I)
_ITEM = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*\S)\s*$")
_ANCHOR_ITEM = re.compile(r"^\**\s*(entity|relation)\s*\**\s*[:：-]\s*(.+)$", re.I)


def _clean_span(span):
    return span.strip().strip("*`'\"").strip()


def parse_extraction(text: str):
    """Split a completion into rationale steps and ``(kind, span)`` pairs."""
    lines = text.splitlines()
    chain_at = anchor_at = None
    for i, line in enumerate(lines):
        if chain_at is None and _CHAIN_HEAD.match(line):
            chain_at = i
        elif chain_at is not None and anchor_at is None and _ANCHOR_HEAD.match(line):
            anchor_at = i
    if chain_at is None or anchor_at is None:
        raise ParseFailure("completion lacks a RationaleChain or Anchors section")
    steps = []
    for line in lines[chain_at + 1: anchor_at]:
        m = _ITEM.match(line)
        if m:
            steps.append(m.group(1).strip())
    if not 3 <= len(steps) <= 6:
        raise ParseFailure(f"rationale chain has {len(steps)} steps; expected 3-6")
    anchors = []
    for line in lines[anchor_at + 1:]:
        m = _ITEM.match(line)
        if not m:
            continue
        am = _ANCHOR_ITEM.match(m.group(1).strip())
        if am:
            anchors.append((am.group(1).lower(), _clean_span(am.group(2))))
    if not anchors:
        raise ParseFailure("Anchors section lists no typed anchors")
    return steps, anchors


def ground_anchors(anchors, g: TextualGraph):
    """Keep anchors whose span occurs (case-insensitively) in a node or edge text.

    Entity spans ground to node ids, relation spans to edge indices of the
    graph ``g`` was sliced from.
    """
    node_texts = [(v, t.lower()) for v, t in g.nodes.items()]
    edge_texts = [(g.edge_origin[i], t.lower()) for i, (_, t, _) in enumerate(g.edges)]
    kept = []
    for kind, span in anchors:
        needle = span.lower()
        pool = node_texts if kind == "entity" else edge_texts
        hits = sorted({ident for ident, text in pool if needle and needle in text})
        if hits:
            kept.append(Anchor(kind, span, hits))
        else:
            log.warning("dropping ungrounded %s anchor %r", kind, span)
    return kept


def extract_rationale(question, answer, g: TextualGraph, gateway, **params) -> RationaleBundle:
    """Prompt for a rationale chain and anchors, then ground the anchors in ``g``."""
    if len(g) == 0:
        raise ValueError("cannot extract from an empty graph")
    if not isinstance(answer, str):
        answer = "; ".join(answer)
    base = render_prompt("extraction", question=question, answer=answer, graph=linearize(g))
    error = None
    for attempt in range(REPROMPT_BUDGET + 1):
        prompt = base if attempt == 0 else base + REPROMPT_NOTE.format(n=attempt)
        try:
            steps, raw = parse_extraction(gateway.complete(prompt, **params))
        except ParseFailure as exc:
            error = exc
            continue
        anchors = ground_anchors(raw, g)
        if not anchors:
            raise NoGroundedAnchors("no extracted anchor occurs in the graph")
        return RationaleBundle(steps, anchors)
    raise ParseFailure(f"{error} (after {REPROMPT_BUDGET} re-prompts)")


JUDGE_LABELS = {
    "relevance": ("Irrelevant", "Relevant"),
    "faithfulness": ("Not Faithful", "Faithful"),
}


def coerce_label(text, kind):
    labels = JUDGE_LABELS[kind]
    cleaned = text.strip().strip(".'\"").strip().lower()
    for label in labels:
        if cleaned == label.lower():
            return label
    low = text.lower()
    # Negative labels contain the positive ones, so test them first.
    for label in labels:
        if label.lower() in low:
            return label
    raise JudgeUnparseable(f"cannot read a {kind} label from {text[:60]!r}")


def judge(question, bundle: RationaleBundle, kind, gateway, **params) -> str:
    if kind not in JUDGE_LABELS:
        raise ValueError(f"kind must be one of {sorted(JUDGE_LABELS)}")
    prompt = render_prompt(f"judge_{kind}", question=question,
                           anchors=bundle.anchor_text(), rationale=bundle.rationale_text())
    return coerce_label(gateway.complete(prompt, **params), kind)
