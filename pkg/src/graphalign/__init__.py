"""Anchor- and rationale-guided alignment for graph retrieval-augmented generation."""
from .aligner import AlignTrainExample, GraphAligner, example_from_table, train_aligner
from .config import PipelineConfig, load_config
from .embeddings import EmbeddingClient, EmbeddingTable, HashingEmbedder, cosine
from .errors import GraphAlignError
from .graph import TextualGraph, linearize, load_graph, load_linearized, read_graph
from .llm import ChatGateway, RationaleBundle, extract_rationale, judge, render_prompt
from .metrics import alignment_analysis, exact_metrics
from .refine import GenerationBundle, SeedPruner, count_tokens, generate_answer, make_bundle, prune
from .retrieval import SubgraphRetriever, retrieve, solve_pcst, top_k

__version__ = "0.1.0"

__all__ = [
    "AlignTrainExample", "GraphAligner", "example_from_table", "train_aligner",
    "PipelineConfig", "load_config",
    "EmbeddingClient", "EmbeddingTable", "HashingEmbedder", "cosine",
    "GraphAlignError",
    "TextualGraph", "linearize", "load_graph", "load_linearized", "read_graph",
    "ChatGateway", "RationaleBundle", "extract_rationale", "judge", "render_prompt",
    "alignment_analysis", "exact_metrics",
    "GenerationBundle", "SeedPruner", "count_tokens", "generate_answer", "make_bundle", "prune",
    "SubgraphRetriever", "retrieve", "solve_pcst", "top_k",
]
