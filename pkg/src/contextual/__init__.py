"""Attention-guided token filtering and knowledge-graph retrieval for clinical note summarization."""

from .attention import AttentionTensor, MiniTransformerConfig, compute_attention, load_attention, save_attention
from .corpus import ClinicalNote, TokenSequence, detokenize, flatten_note, load_corpus, tokenize
from .cptf import FilterConfig, ReducedNote, compute_importance, filter_note, layer_weights, reconstruct, select_tokens
from .kg import KnowledgeGraph, build_graph, enrich, retrieve_context

__all__ = [
    "AttentionTensor", "MiniTransformerConfig", "compute_attention", "load_attention", "save_attention",
    "ClinicalNote", "TokenSequence", "detokenize", "flatten_note", "load_corpus", "tokenize",
    "FilterConfig", "ReducedNote", "compute_importance", "filter_note", "layer_weights", "reconstruct",
    "select_tokens", "KnowledgeGraph", "build_graph", "enrich", "retrieve_context",
]
