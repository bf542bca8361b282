"""Retrieval-augmented generation over chunks at four abstraction levels."""

from .corpus import Document, Paragraph, Section, parse_corpus_file, word_count
from .segmenter import Chunk, ChunkLevel, SegmenterConfig, split_sentences
from .index import ChunkDatabase, HashingEmbedder, cosine_similarity, embed_all, score_all
from .retriever import RetrievalResult, RetrieverConfig, retrieve
from .evaluation import count_matches, evaluate_run, f1_score

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkDatabase",
    "ChunkLevel",
    "Document",
    "HashingEmbedder",
    "Paragraph",
    "RetrievalResult",
    "RetrieverConfig",
    "Section",
    "SegmenterConfig",
    "cosine_similarity",
    "count_matches",
    "embed_all",
    "evaluate_run",
    "f1_score",
    "parse_corpus_file",
    "retrieve",
    "score_all",
    "split_sentences",
    "word_count",
]
