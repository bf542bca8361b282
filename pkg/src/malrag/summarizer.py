"""Map-reduce key-information extraction for section and document chunks."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .corpus import Document, word_count
from .remote import BackendError, ChatCompletionClient
from .segmenter import Chunk, ChunkLevel, chunk_id_for, Provenance, split_sentences

logger = logging.getLogger(__name__)


class TaskKind(enum.Enum):
    PARAGRAPH_SUMMARY = "paragraph_summary"
    SECTION_AGGREGATE = "section_aggregate"
    DOCUMENT_AGGREGATE = "document_aggregate"


class ExtractorBackend(Protocol):
    backend_id: str
    deterministic: bool
    single_flight: bool

    def extract(self, task: TaskKind, inputs: Sequence[str]) -> str: ...


class SummarizationError(RuntimeError):
    def __init__(self, chunk_id: str, cause: BaseException | str):
        super().__init__(f"{chunk_id}: {cause}")
        self.chunk_id = chunk_id
        self.cause = cause


@dataclass(frozen=True)
class SummaryRecord:
    chunk_id: str
    backend_id: str
    input_chunk_ids: tuple[str, ...]
    prompt_kind: TaskKind

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "backend_id": self.backend_id,
            "input_chunk_ids": list(self.input_chunk_ids),
            "prompt_kind": self.prompt_kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SummaryRecord:
        return cls(d["chunk_id"], d["backend_id"], tuple(d["input_chunk_ids"]), TaskKind(d["prompt_kind"]))


def truncate_words(text: str, limit: int) -> str:
    return " ".join(text.split()[:limit])


@dataclass
class MockExtractor:
    """Deterministic extractive stand-in for an LLM summarizer.

    Paragraph summaries are the paragraph's first sentence; aggregates are the
    inputs concatenated in order. Both are cut to ``max_words`` words.
    """

    max_words: int = 60
    backend_id: str = "mock-extractive-v1"
    deterministic: bool = True
    single_flight: bool = False

    def extract(self, task: TaskKind, inputs: Sequence[str]) -> str:
        if not inputs:
            raise ValueError("extract needs at least one input")
        if task is TaskKind.PARAGRAPH_SUMMARY:
            sentences = split_sentences(" ".join(inputs))
            return truncate_words(sentences[0], self.max_words) if sentences else ""
        return truncate_words(" ".join(inputs), self.max_words)


def load_templates(directory: str | Path | None = None) -> dict[TaskKind, str]:
    """Prompt templates keyed by task; ``directory`` overrides the shipped defaults."""
    out = {}
    for kind in TaskKind:
        name = f"{kind.value}.txt"
        if directory is not None and (Path(directory) / name).exists():
            text = (Path(directory) / name).read_text(encoding="utf-8")
        else:
            text = resources.files("malrag").joinpath(f"data/prompts/{name}").read_text(encoding="utf-8")
        if text.count("{input}") != 1:
            raise ValueError(f"template {name} must contain exactly one {{input}} placeholder")
        out[kind] = text
    return out


@dataclass
class HttpExtractor:
    client: ChatCompletionClient
    templates: dict[TaskKind, str] = field(default_factory=load_templates)
    deterministic: bool = False
    single_flight: bool = False

    @property
    def backend_id(self) -> str:
        return f"http-chat:{self.client.model}"

    def extract(self, task: TaskKind, inputs: Sequence[str]) -> str:
        prompt = self.templates[task].replace("{input}", "\n\n".join(inputs))
        out = self.client.complete(prompt).strip()
        if not out:
            raise BackendError(f"empty {task.value} output")
        return out


def _call(backend: ExtractorBackend, task: TaskKind, inputs: Sequence[str], chunk_id: str) -> str:
    try:
        out = backend.extract(task, list(inputs))
    except Exception as exc:
        raise SummarizationError(chunk_id, exc) from exc
    if not out or not out.strip():
        raise SummarizationError(chunk_id, f"backend returned empty {task.value} output")
    return out


def summarize_section(
    section_paragraph_chunks: Sequence[Chunk],
    backend: ExtractorBackend,
    executor: ThreadPoolExecutor | None = None,
) -> str:
    """Summarize each paragraph (map), then summarize those summaries (reduce)."""
    if not section_paragraph_chunks:
        raise ValueError("summarize_section needs at least one paragraph chunk")
    first = section_paragraph_chunks[0].provenance
    for c in section_paragraph_chunks:
        if c.level is not ChunkLevel.PARAGRAPH:
            raise ValueError(f"{c.chunk_id} is not a paragraph chunk")
        if (c.provenance.doc_id, c.provenance.section_index) != (first.doc_id, first.section_index):
            raise ValueError(f"{c.chunk_id} belongs to a different section")

    def map_one(c: Chunk) -> str:
        return _call(backend, TaskKind.PARAGRAPH_SUMMARY, [c.text], c.chunk_id)

    if executor is None:
        partials = [map_one(c) for c in section_paragraph_chunks]
    else:
        partials = list(executor.map(map_one, section_paragraph_chunks))
    section_id = chunk_id_for(ChunkLevel.SECTION, Provenance(first.doc_id, first.section_index))
    return _call(backend, TaskKind.SECTION_AGGREGATE, partials, section_id)


def summarize_document(section_summaries: Sequence[str], backend: ExtractorBackend, chunk_id: str = "") -> str:
    if not section_summaries:
        raise ValueError("summarize_document needs at least one section summary")
    return _call(backend, TaskKind.DOCUMENT_AGGREGATE, section_summaries, chunk_id or "<document>")


@dataclass
class FillResult:
    chunks: list[Chunk]
    records: list[SummaryRecord]
    failed: dict[str, str]

    @property
    def complete(self) -> bool:
        return not self.failed and not any(c.is_placeholder for c in self.chunks)


def fill_placeholders(
    documents: Iterable[Document],
    chunks: Sequence[Chunk],
    backend: ExtractorBackend,
    *,
    parallelism: int = 1,
    on_document: Callable[[str, list[Chunk], list[SummaryRecord]], None] | None = None,
) -> FillResult:
    """Fill every section placeholder from its paragraphs, then every document
    placeholder from its freshly filled sections.

    Documents whose placeholders are already filled are skipped. A backend
    failure abandons the current document only; it is listed in ``failed``.
    ``on_document`` is called after each document is filled.
    """
    by_id = {c.chunk_id: c for c in chunks}
    order = [c.chunk_id for c in chunks]
    records: list[SummaryRecord] = []
    failed: dict[str, str] = {}
    workers = 1 if backend.single_flight else max(1, parallelism)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for doc in documents:
            doc_cid = chunk_id_for(ChunkLevel.DOCUMENT, Provenance(doc.doc_id))
            if doc_cid not in by_id:
                raise KeyError(f"no document placeholder for {doc.doc_id!r}")
            if not by_id[doc_cid].is_placeholder:
                continue
            try:
                filled, recs = _fill_document(doc, by_id, backend, pool if workers > 1 else None)
            except SummarizationError as exc:
                logger.warning("summarization failed for %s: %s", doc.doc_id, exc)
                failed[doc.doc_id] = str(exc)
                continue
            for c in filled:
                by_id[c.chunk_id] = c
            records.extend(recs)
            if on_document is not None:
                on_document(doc.doc_id, filled, recs)

    return FillResult([by_id[cid] for cid in order], records, failed)


def _fill_document(
    doc: Document, by_id: dict[str, Chunk], backend: ExtractorBackend, pool: ThreadPoolExecutor | None
) -> tuple[list[Chunk], list[SummaryRecord]]:
    filled: list[Chunk] = []
    records: list[SummaryRecord] = []
    for sec in doc.sections:
        sid = chunk_id_for(ChunkLevel.SECTION, Provenance(doc.doc_id, sec.section_index))
        para_ids = [
            chunk_id_for(ChunkLevel.PARAGRAPH, Provenance(doc.doc_id, sec.section_index, (k, k)))
            for k in range(len(sec.paragraphs))
        ]
        text = summarize_section([by_id[p] for p in para_ids], backend, pool)
        filled.append(replace(by_id[sid], text=text, words=word_count(text)))
        records.append(SummaryRecord(sid, backend.backend_id, tuple(para_ids), TaskKind.SECTION_AGGREGATE))

    doc_cid = chunk_id_for(ChunkLevel.DOCUMENT, Provenance(doc.doc_id))
    text = summarize_document([c.text for c in filled], backend, doc_cid)
    section_ids = tuple(c.chunk_id for c in filled)
    filled.append(replace(by_id[doc_cid], text=text, words=word_count(text)))
    records.append(SummaryRecord(doc_cid, backend.backend_id, section_ids, TaskKind.DOCUMENT_AGGREGATE))
    return filled, records
