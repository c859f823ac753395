"""Bundled 20-question toy corpus and the scripted responder used to record
its fixtures.

``python -m graphalign.toy build DIR`` regenerates ``DIR/corpus``,
``DIR/fixtures`` and ``DIR/config.json``. The shipped copy lives in
``graphalign/data/toy`` and is what the offline tests run against.
"""
from __future__ import annotations

import argparse
import json
import random
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .config import config_from_dict
from .embeddings import EmbeddingClient, EmbeddingTable, HashingEmbedder, save_embeddings
from .graph import TextualGraph, load_linearized, write_graph
from .llm import REPROMPT_NOTE, ChatGateway

EMBED_DIM = 48
SEED = 7
N_QUESTIONS = 20
HALLUCINATING = "q07"   # extraction reply names an entity absent from the graph
MALFORMED = "q12"       # first extraction reply omits the Anchors section

TOY_CONFIG = {
    "paths": {"corpus": "corpus", "fixtures": "fixtures", "output": "out"},
    "retrieval": {"k": 10, "edge_cost": 0.5, "mode": "heuristic"},
    "aligner": {"hidden_dim": 64, "n_layers": 2, "target_dim": 64, "temperature": 0.07,
                "steps": 60, "batch_size": 8, "learning_rate": 0.01, "seed": 0, "root_weight": True},
    "prune": {"n_seed": 4},
    "gateway": {"offline": True},
    "eval": {"judge": True},
    "sweep": {"n_seed": [2, 4], "align_steps": [20, 60], "top_k": [10]},
}

FIRST = ["Marla", "Odile", "Tavin", "Corwin", "Elspeth", "Bram", "Isolde", "Quentin", "Rhea", "Soren",
         "Talia", "Ulric", "Vesna", "Wendell", "Yara", "Zeno", "Anouk", "Basil", "Cleo", "Dorian",
         "Ines", "Jasper", "Kaia", "Lucan", "Mireille", "Nils", "Orla", "Piet"]
LAST = ["Venn", "Harrow", "Quell", "Ashby", "Morrow", "Thistle", "Calder", "Fenwick", "Lark", "Ossory",
        "Pike", "Rookwood", "Sable", "Tamsin", "Voss", "Wren", "Yarrow", "Brande", "Dunmore", "Keel"]
CITY_PRE = ["Port", "East", "North", "Saint", "Lake", "Fort", "New", "Old"]
CITY_STEM = ["Ostrel", "Varna", "Kettering", "Brisa", "Calloway", "Dunmere", "Elmsby", "Galen", "Harth",
             "Istra", "Jorvik", "Kelso", "Lumen", "Marrow", "Nessa"]
COUNTRIES = {"Valdoria": "Valdorian", "Ostmark": "Ostic", "Carinth": "Carinthian", "Lusitra": "Lusitran",
             "Pellucia": "Pellucid", "Norvane": "Norvish", "Estrella": "Estrellan", "Quorin": "Quorine",
             "Sarvia": "Sarvic", "Tessaly": "Tessalian", "Wexland": "Wexish", "Brevonia": "Brevonian"}
ADJ = ["Glass", "Silent", "Copper", "Hollow", "Winter", "Amber", "Crooked", "Last", "Salt", "Paper",
       "Iron", "Velvet"]
NOUN = ["Orchard", "Lantern", "Harbor", "Cartographer", "Meridian", "Archive", "Tide", "Garden", "Compass",
        "Vigil", "Atlas", "Ferry"]
FILM_HEAD = ["Shadows", "Echoes", "Letters", "Storms", "Bridges", "Songs", "Ashes", "Lights"]
FILM_TAIL = ["Avalon", "Cinder Bay", "the North", "Maren", "Halcyon", "the Delta", "Greywater"]
GENRES = ["Mystery", "Historical fiction", "Drama", "Science fiction", "Poetry", "Documentary", "Thriller"]
PROFESSIONS = ["Novelist", "Teacher", "Journalist", "Architect", "Physician", "Painter", "Actor",
               "Film director", "Engineer"]
ZONES = ["Central European Time", "Eastern Time Zone", "Greenwich Mean Time", "Pacific Time Zone"]
TYPES = ["Author", "City/Town/Village", "Book", "Film", "Person", "Country", "Award"]
SUBJECTS = ["Memory", "Seafaring", "War", "Family", "Exile", "Childhood", "Rivers"]


def _person(rng):
    return f"{rng.choice(FIRST)} {rng.choice(LAST)}"


def _city(rng):
    return f"{rng.choice(CITY_PRE)} {rng.choice(CITY_STEM)}"


def _book(rng):
    return f"The {rng.choice(ADJ)} {rng.choice(NOUN)}"


def _film(rng):
    return f"{rng.choice(FILM_HEAD)} of {rng.choice(FILM_TAIL)}"


def _university(rng):
    return f"University of {rng.choice(CITY_STEM)}"


def _award(rng):
    return f"The {rng.choice(ADJ)} Prize"


DISTRACTORS = [
    ("people.person.profession", lambda r: r.choice(PROFESSIONS)),
    ("people.person.nationality", lambda r: r.choice(list(COUNTRIES))),
    ("people.person.gender", lambda r: r.choice(["Male", "Female"])),
    ("common.topic.notable_types", lambda r: r.choice(TYPES)),
    ("book.book.genre", lambda r: r.choice(GENRES)),
    ("location.location.time_zones", lambda r: r.choice(ZONES)),
    ("award.award_winner.awards_won", _award),
    ("people.person.date_of_birth", lambda r: str(r.randint(1900, 1990))),
    ("film.film.release_date_s", lambda r: str(r.randint(1950, 2020))),
    ("common.topic.subject_of", _book),
    ("people.person.sibling_s", _person),
    ("book.written_work.subjects", lambda r: r.choice(SUBJECTS)),
    ("film.film.featured_film_locations", _city),
    ("people.person.places_lived", _city),
]


@dataclass
class ToyQuestion:
    id: str
    template: str
    question: str
    topic: str
    rel1: str
    anchor: str
    rel2: str
    answers: list
    extra: list = field(default_factory=list)   # further rel2 objects that are not answers


def _question(qid, template, rng):
    if template == "birthplace":
        book, author, city = _book(rng), _person(rng), _city(rng)
        return ToyQuestion(qid, template, f"where was the author of {book.lower()} born?", book,
                           "book.written_work.author", author, "people.person.place_of_birth", [city])
    if template == "language":
        city, country = _city(rng), rng.choice(list(COUNTRIES))
        langs = [COUNTRIES[country]]
        if rng.random() < 0.5:
            langs.append(rng.choice([v for v in COUNTRIES.values() if v not in langs]))
        return ToyQuestion(qid, template, f"what languages are spoken in the country where {city} is?",
                           city, "location.location.containedby", country,
                           "location.country.languages_spoken", langs)
    if template == "director":
        actor, film, director = _person(rng), _film(rng), _person(rng)
        return ToyQuestion(qid, template, f"who directed the film that {actor} starred in?", actor,
                           "film.actor.film", film, "film.film.directed_by", [director])
    if template == "education":
        person, spouse, uni = _person(rng), _person(rng), _university(rng)
        return ToyQuestion(qid, template, f"which university did the spouse of {person} attend?", person,
                           "people.person.spouse_s", spouse, "people.person.education", [uni])
    book, author = _book(rng), _person(rng)
    works, n_works = [], rng.randint(2, 3)
    while len(works) < n_works:
        w = _book(rng)
        if w != book and w not in works:
            works.append(w)
    return ToyQuestion(qid, "works", f"what other books did the author of {book.lower()} write?", book,
                       "book.written_work.author", author, "book.author.works_written", works, [book])


TEMPLATES = ("birthplace", "language", "director", "education", "works")


def _graph(q, rng):
    texts, edges = [], []

    def add(text):
        texts.append(text)
        return len(texts) - 1

    topic, anchor = add(q.topic), add(q.anchor)
    edges.append((topic, q.rel1, anchor))
    for a in q.answers:
        edges.append((anchor, q.rel2, add(a)))
    for x in q.extra:
        edges.append((anchor, q.rel2, texts.index(x)))
    core = {q.rel1, q.rel2, "book.written_work.author", "book.author.works_written"}
    pool = [d for d in DISTRACTORS if d[0] not in core]

    target = rng.randint(24, 40)
    core_nodes = list(range(len(texts)))
    while len(texts) < target:
        # Favour the reasoning chain so its entities become hubs.
        src = rng.choice(core_nodes) if rng.random() < 0.45 else rng.randrange(len(texts))
        rel, make = rng.choice(pool)
        obj = make(rng)
        if obj not in texts:
            edges.append((src, rel, add(obj)))
    for _ in range(rng.randint(1, 3)):
        a, b = rng.sample(range(len(texts)), 2)
        rel, _ = rng.choice(pool)
        edges.append((a, rel, b))
    perm = list(range(len(texts)))
    rng.shuffle(perm)
    return TextualGraph({perm[i]: t for i, t in enumerate(texts)},
                        tuple((perm[s], r, perm[d]) for s, r, d in edges))


def make_corpus(n=N_QUESTIONS, seed=SEED):
    """Deterministic questions and graphs: list of (ToyQuestion, TextualGraph)."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        q = _question(f"q{i:02d}", TEMPLATES[i % len(TEMPLATES)], rng)
        out.append((q, _graph(q, rng)))
    return out


def write_corpus(corpus_dir, items, embedder):
    corpus_dir = Path(corpus_dir)
    lines = []
    for q, g in items:
        gdir = corpus_dir / "graphs" / q.id
        gdir.mkdir(parents=True, exist_ok=True)
        write_graph(g, gdir / "nodes.csv", gdir / "edges.csv")
        node_vecs = dict(zip(g.node_ids, embedder([g.nodes[v] for v in g.node_ids])))
        edge_vecs = dict(enumerate(embedder([t for _, t, _ in g.edges]))) if g.edges else {}
        save_embeddings(gdir / "embeddings.bin", EmbeddingTable(EMBED_DIM, node_vecs, edge_vecs))
        lines.append(json.dumps({"id": q.id, "question": q.question, "answers": q.answers,
                                 "graph": f"graphs/{q.id}"}, sort_keys=True))
    (corpus_dir / "questions.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- scripted responder ------------------------------------------------------------
def _between(text, start, end):
    i = text.index(start) + len(start)
    return text[i: text.index(end, i)]


def _find(g, name):
    name = name.lower()
    for v, t in g.nodes.items():
        if t.lower() == name:
            return v
    return None


def _follow(g, v, rel):
    return [g.nodes[d] for s, r, d in g.edges if s == v and r == rel]


class ScriptedResponder:
    """Stands in for the chat model when recording the toy fixtures.

    Extraction replies are written from the known reasoning path; generator
    replies walk the graph text in the prompt, so pruning that loses the
    path produces wrong answers; judge replies follow simple rules.
    """

    def __init__(self, questions):
        self.by_text = {q.question: q for q in questions}

    def __call__(self, prompt):
        if prompt.startswith("You are a helpful assistant for anchor"):
            return self._extract(prompt)
        if prompt.startswith("Textualized Graph:"):
            return self._generate(prompt)
        if prompt.startswith("Evaluate the relevance"):
            return self._judge(prompt, "relevance")
        if prompt.startswith("Evaluate the following"):
            return self._judge(prompt, "faithfulness")
        raise ValueError("scripted responder got an unknown prompt")

    def _extract(self, prompt):
        q = self.by_text[_between(prompt, "Question: ", "\n\nAnswer: ")]
        answers = ", ".join(q.answers)
        steps = [
            f"The question is about {q.topic}.",
            f"In the graph, {q.topic} is linked to {q.anchor} by {q.rel1}.",
            f"{q.anchor} is linked to {answers} by {q.rel2}.",
            f"So the answer is {answers}.",
        ]
        anchors = [("entity", q.anchor), ("relation", q.rel1), ("relation", q.rel2)]
        if q.id == HALLUCINATING:
            steps.insert(2, f"{q.anchor} was mentored by Professor Hollis Grange.")
            anchors.append(("entity", "Professor Hollis Grange"))
        chain = "RationaleChain:\n" + "\n".join(f"{i}. {s}" for i, s in enumerate(steps, 1))
        if q.id == MALFORMED and REPROMPT_NOTE.format(n=1) not in prompt:
            return chain + "\n"
        return chain + "\n\nAnchors:\n" + "\n".join(f"- {k}: {s}" for k, s in anchors) + "\n"

    def _generate(self, prompt):
        graph_text = _between(prompt, "Textualized Graph: ", ".\n\nPlease answer the given question.")
        q = self.by_text[_between(prompt, "\nQuestion: ", "\n\nAnswer:")]
        g = load_linearized(graph_text)
        topic = _find(g, q.topic)
        if topic is None:
            return "I don't know."
        hops = _follow(g, topic, q.rel1)
        if not hops:
            # Path is broken: guess the first neighbour of the topic.
            near = [g.nodes[d] for s, _, d in g.edges if s == topic]
            return near[0] if near else "I don't know."
        found = [t for t in _follow(g, _find(g, hops[0]), q.rel2) if t != q.topic]
        return "\n".join(found) if found else hops[0]

    def _judge(self, prompt, kind):
        q = self.by_text[_between(prompt, "QUESTION: ", "\n\nAnchors: ")]
        anchors = _between(prompt, "\n\nAnchors: ", "\n\nRationale: ")
        rationale = prompt.split("\n\nRationale: ", 1)[1]
        if kind == "relevance":
            return "Relevant" if q.anchor in anchors else "Irrelevant"
        return "Not Faithful" if "Hollis Grange" in rationale else "Faithful"


# -- build ---------------------------------------------------------------------------
def build(dest, out_dir=None):
    """Write corpus, config and recorded fixtures for the toy set into ``dest``.

    Every stage (plus alignment analysis and the sweep) runs once with the
    scripted responder and the hashing embedder in record mode so that the
    offline replay later finds a fixture for every call.
    """
    from . import pipeline as P

    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    embedder = HashingEmbedder(EMBED_DIM)
    items = make_corpus()
    write_corpus(dest / "corpus", items, embedder)
    (dest / "config.json").write_text(json.dumps(TOY_CONFIG, indent=1, sort_keys=True) + "\n")
    config = config_from_dict(TOY_CONFIG, dest)
    gateway = ChatGateway(fixture_dir=dest / "fixtures" / "llm",
                          backend=ScriptedResponder([q for q, _ in items]), record=True)
    client = EmbeddingClient(fixture_dir=dest / "fixtures" / "embeddings", backend=embedder, record=True)
    with tempfile.TemporaryDirectory() as tmp:
        ctx = P.Context(config, out_dir or tmp, gateway=gateway, embedder=client)
        for stage in P.STAGES:
            P.STAGE_FUNCS[stage](ctx)
    return dest


def toy_dir():
    """Directory of the shipped toy set."""
    return Path(str(resources.files("graphalign") / "data" / "toy"))


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m graphalign.toy")
    sub = p.add_subparsers(dest="cmd", required=True)
    b = sub.add_parser("build", help="regenerate the toy corpus and fixtures")
    b.add_argument("dest")
    args = p.parse_args(argv)
    if args.cmd == "build":
        print(build(args.dest))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
