"""Pipeline configuration: one JSON file with ``${VAR}`` interpolation."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigInvalid
from .retrieval import MODES


@dataclass
class PathsConfig:
    corpus: str = "corpus"
    fixtures: str = "fixtures"
    output: str = "out"


@dataclass
class RetrievalConfig:
    k: int = 10
    edge_cost: float = 0.5
    mode: str = "heuristic"


@dataclass
class AlignerConfig:
    hidden_dim: int = 1024
    n_layers: int = 4
    target_dim: int = 4096
    temperature: float = 0.07
    steps: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-5
    seed: int = 0
    root_weight: bool = False


@dataclass
class PruneConfig:
    n_seed: int = 25


@dataclass
class GatewayConfig:
    base_url: str = None
    model: str = "meta-llama/Llama-3.1-70B-Instruct"
    offline: bool = True
    record: bool = False
    temperature: float = 0.0
    max_tokens: int = 512
    api_key_env: str = "GRAPHALIGN_API_KEY"
    embedding_url: str = None


@dataclass
class EvalConfig:
    judge: bool = False


@dataclass
class SweepConfig:
    n_seed: list = field(default_factory=lambda: [5, 10, 15, 20, 25, 30])
    align_steps: list = field(default_factory=lambda: [20, 40, 60, 80, 100])
    top_k: list = field(default_factory=lambda: [5, 10, 15])


SECTIONS = {
    "paths": PathsConfig,
    "retrieval": RetrievalConfig,
    "aligner": AlignerConfig,
    "prune": PruneConfig,
    "gateway": GatewayConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}
# Left out of the hash: locations, transport details and recording switches.
UNHASHED = {"paths": None, "gateway": {"base_url", "record", "api_key_env", "embedding_url"}}


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, name):
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def corpus_dir(self):
        return self.resolve("corpus")

    @property
    def fixtures_dir(self):
        return self.resolve("fixtures")

    @property
    def output_dir(self):
        return self.resolve("output")

    def config_hash(self):
        d = self.to_dict()
        for section, keys in UNHASHED.items():
            if keys is None:
                d.pop(section)
            else:
                for k in keys:
                    d[section].pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self, check_paths=True):
        r, a, p = self.retrieval, self.aligner, self.prune
        checks = [
            (isinstance(r.k, int) and r.k >= 1, "retrieval.k must be an integer >= 1"),
            (_num(r.edge_cost) and r.edge_cost >= 0, "retrieval.edge_cost must be >= 0"),
            (r.mode in MODES, f"retrieval.mode must be one of {MODES}"),
            (isinstance(a.hidden_dim, int) and a.hidden_dim >= 1, "aligner.hidden_dim must be >= 1"),
            (isinstance(a.n_layers, int) and a.n_layers >= 1, "aligner.n_layers must be >= 1"),
            (isinstance(a.target_dim, int) and a.target_dim >= 1, "aligner.target_dim must be >= 1"),
            (_num(a.temperature) and a.temperature > 0, "aligner.temperature must be > 0"),
            (isinstance(a.steps, int) and a.steps >= 1, "aligner.steps must be >= 1"),
            (isinstance(a.batch_size, int) and a.batch_size >= 1, "aligner.batch_size must be >= 1"),
            (_num(a.learning_rate) and a.learning_rate > 0, "aligner.learning_rate must be > 0"),
            (isinstance(p.n_seed, int) and p.n_seed >= 1, "prune.n_seed must be >= 1"),
        ]
        for name in ("n_seed", "align_steps", "top_k"):
            values = getattr(self.sweep, name)
            checks.append((isinstance(values, list) and values
                           and all(isinstance(v, int) and v >= 1 for v in values),
                           f"sweep.{name} must be a non-empty list of integers >= 1"))
        for ok, message in checks:
            if not ok:
                raise ConfigInvalid(message)
        if check_paths:
            if not self.corpus_dir.is_dir():
                raise ConfigInvalid(f"corpus directory {self.corpus_dir} does not exist")
            if self.gateway.offline and not self.gateway.record and not self.fixtures_dir.is_dir():
                raise ConfigInvalid(f"offline mode needs fixture directory {self.fixtures_dir}")
        return self


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value):
    if isinstance(value, str):
        def sub(m):
            if m.group(1) not in os.environ:
                raise ConfigInvalid(f"environment variable {m.group(1)} is not set")
            return os.environ[m.group(1)]
        return _VAR.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def config_from_dict(data, base_dir="."):
    data = _interpolate(copy.deepcopy(data))
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigInvalid(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigInvalid(f"config section {name!r} must be an object")
        allowed = {f.name for f in fields(cls)}
        extra = set(section) - allowed
        if extra:
            raise ConfigInvalid(f"unknown key(s) in {name}: {sorted(extra)}")
        kwargs[name] = cls(**section)
    return PipelineConfig(**kwargs, base_dir=Path(base_dir))


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(data, path.parent)
