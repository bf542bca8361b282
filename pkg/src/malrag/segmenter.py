"""Sentence splitting and the four chunk populations.

Paragraph and multi-sentence chunks keep the original text. Section and
document chunks start as empty placeholders that the summarizer fills.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document, Paragraph, normalize_whitespace, word_count

ABBREVIATIONS_VERSION = 1


class ChunkLevel(enum.Enum):
    DOCUMENT = "document"
    SECTION = "section"
    PARAGRAPH = "paragraph"
    MULTI_SENTENCE = "multi-sentence"

    @property
    def rank(self) -> int:
        """Abstraction rank; higher is more abstract."""
        return _RANK[self]

    def __lt__(self, other: ChunkLevel) -> bool:
        if not isinstance(other, ChunkLevel):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other: ChunkLevel) -> bool:
        if not isinstance(other, ChunkLevel):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other: ChunkLevel) -> bool:
        if not isinstance(other, ChunkLevel):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other: ChunkLevel) -> bool:
        if not isinstance(other, ChunkLevel):
            return NotImplemented
        return self.rank >= other.rank

    @classmethod
    def parse(cls, name: str) -> ChunkLevel:
        aliases = {"multi": cls.MULTI_SENTENCE, "multi_sentence": cls.MULTI_SENTENCE}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


_RANK = {
    ChunkLevel.DOCUMENT: 3,
    ChunkLevel.SECTION: 2,
    ChunkLevel.PARAGRAPH: 1,
    ChunkLevel.MULTI_SENTENCE: 0,
}
ALL_LEVELS = frozenset(ChunkLevel)
SUMMARY_LEVELS = frozenset({ChunkLevel.DOCUMENT, ChunkLevel.SECTION})


@dataclass(frozen=True)
class Provenance:
    doc_id: str
    section_index: int | None = None
    paragraph_range: tuple[int, int] | None = None
    sentence_range: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "section_index": self.section_index,
            "paragraph_range": list(self.paragraph_range) if self.paragraph_range else None,
            "sentence_range": list(self.sentence_range) if self.sentence_range else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Provenance:
        pr, sr = d.get("paragraph_range"), d.get("sentence_range")
        return cls(
            d["doc_id"],
            d.get("section_index"),
            tuple(pr) if pr is not None else None,
            tuple(sr) if sr is not None else None,
        )


@dataclass(frozen=True)
class Chunk:
    """A retrieval unit.

    ``vanilla`` marks chunks of the boundary-agnostic baseline population;
    those carry MULTI_SENTENCE level and a document-wide ``sentence_range``.
    """

    chunk_id: str
    level: ChunkLevel
    text: str
    words: int
    provenance: Provenance
    is_summary: bool
    vanilla: bool = False

    @property
    def is_placeholder(self) -> bool:
        return self.is_summary and not self.text

    def to_dict(self) -> dict:
        d = {
            "chunk_id": self.chunk_id,
            "level": self.level.value,
            "text": self.text,
            "words": self.words,
            "provenance": self.provenance.to_dict(),
            "is_summary": self.is_summary,
        }
        if self.vanilla:
            d["vanilla"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Chunk:
        return cls(
            d["chunk_id"],
            ChunkLevel(d["level"]),
            d["text"],
            d["words"],
            Provenance.from_dict(d["provenance"]),
            d["is_summary"],
            d.get("vanilla", False),
        )


@dataclass(frozen=True)
class SegmenterConfig:
    multi_sentence_target_words: int = 350
    min_sentences_per_chunk: int = 1
    vanilla_chunk_words: int = 350

    def __post_init__(self):
        if self.multi_sentence_target_words < 1:
            raise ValueError("multi_sentence_target_words must be >= 1")
        if self.min_sentences_per_chunk < 1:
            raise ValueError("min_sentences_per_chunk must be >= 1")
        if self.vanilla_chunk_words < 1:
            raise ValueError("vanilla_chunk_words must be >= 1")


def chunk_id_for(level: ChunkLevel, prov: Provenance, vanilla: bool = False) -> str:
    if vanilla:
        a, b = prov.sentence_range
        return f"{prov.doc_id}#V{a}-{b}"
    if level is ChunkLevel.DOCUMENT:
        return f"{prov.doc_id}#D"
    sid = f"{prov.doc_id}#S{prov.section_index}"
    if level is ChunkLevel.SECTION:
        return sid
    pid = f"{sid}.P{prov.paragraph_range[0]}"
    if level is ChunkLevel.PARAGRAPH:
        return pid
    a, b = prov.sentence_range
    return f"{pid}.M{a}-{b}"


def _make_chunk(level: ChunkLevel, text: str, prov: Provenance, vanilla: bool = False) -> Chunk:
    return Chunk(
        chunk_id=chunk_id_for(level, prov, vanilla),
        level=level,
        text=text,
        words=word_count(text),
        provenance=prov,
        is_summary=level in SUMMARY_LEVELS,
        vanilla=vanilla,
    )


# -- sentence splitting -------------------------------------------------------


def read_abbreviations(path: str | Path) -> frozenset[str]:
    return _parse_abbreviations(Path(path).read_text(encoding="utf-8"))


def _parse_abbreviations(text: str) -> frozenset[str]:
    out = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.add(normalize_whitespace(line).lower())
    return frozenset(out)


@lru_cache(maxsize=1)
def default_abbreviations() -> frozenset[str]:
    data = resources.files("malrag").joinpath("data/abbreviations.txt").read_text(encoding="utf-8")
    return _parse_abbreviations(data)


_MAX_ABBR = 32


def _ends_with_abbreviation(text: str, end: int, abbreviations: frozenset[str]) -> bool:
    lo = max(0, end - _MAX_ABBR - 1)
    head = text[lo:end].lower()
    for abbr in abbreviations:
        if head.endswith(abbr):
            start = len(head) - len(abbr)
            if lo + start == 0 or not head[start - 1].isalnum():
                return True
    return False


def split_sentences(text: str, abbreviations: frozenset[str] | None = None) -> list[str]:
    """Split after '.', '!' or '?' when followed by whitespace and an uppercase
    letter or digit, unless the '.' closes a stop-listed abbreviation.

    The result joined by single spaces equals ``normalize_whitespace(text)``.
    """
    abbreviations = default_abbreviations() if abbreviations is None else abbreviations
    norm = normalize_whitespace(text)
    if not norm:
        return []
    sentences = []
    start = 0
    for i in range(len(norm) - 2):
        ch = norm[i]
        if ch not in ".!?" or norm[i + 1] != " ":
            continue
        nxt = norm[i + 2]
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if ch == "." and _ends_with_abbreviation(norm, i + 1, abbreviations):
            continue
        sentences.append(norm[start : i + 1])
        start = i + 2
    sentences.append(norm[start:])
    return sentences


# -- grouping ------------------------------------------------------------------


def greedy_groups(word_counts: Sequence[int], target: int, min_sentences: int = 1) -> list[tuple[int, int]]:
    """Inclusive index ranges from left-to-right greedy packing.

    A group closes when adding the next item would exceed ``target`` words and
    it already holds ``min_sentences`` items.
    """
    groups = []
    start, total = 0, 0
    for i, wc in enumerate(word_counts):
        size = i - start
        if size and size >= min_sentences and total + wc > target:
            groups.append((start, i - 1))
            start, total = i, 0
        total += wc
    if len(word_counts):
        groups.append((start, len(word_counts) - 1))
    return groups


def segment_multi_sentence(
    paragraph: Paragraph,
    cfg: SegmenterConfig = SegmenterConfig(),
    *,
    doc_id: str = "",
    section_index: int = 0,
    abbreviations: frozenset[str] | None = None,
) -> list[Chunk]:
    sentences = split_sentences(paragraph.text, abbreviations)
    groups = greedy_groups(
        [word_count(s) for s in sentences], cfg.multi_sentence_target_words, cfg.min_sentences_per_chunk
    )
    k = paragraph.paragraph_index
    return [
        _make_chunk(
            ChunkLevel.MULTI_SENTENCE,
            " ".join(sentences[a : b + 1]),
            Provenance(doc_id, section_index, (k, k), (a, b)),
        )
        for a, b in groups
    ]


def segment_paragraphs(document: Document) -> list[Chunk]:
    return [
        _make_chunk(
            ChunkLevel.PARAGRAPH,
            p.text,
            Provenance(document.doc_id, s.section_index, (p.paragraph_index, p.paragraph_index)),
        )
        for s in document.sections
        for p in s.paragraphs
    ]


def make_summary_placeholders(document: Document) -> list[Chunk]:
    out = [
        _make_chunk(ChunkLevel.SECTION, "", Provenance(document.doc_id, s.section_index))
        for s in document.sections
    ]
    out.append(_make_chunk(ChunkLevel.DOCUMENT, "", Provenance(document.doc_id)))
    return out


def segment_vanilla(
    document: Document, target_words: int, abbreviations: frozenset[str] | None = None
) -> list[Chunk]:
    """Baseline chunks: the document's sentence stream merged to size with no
    regard for paragraph or section boundaries."""
    sentences = [
        s for p in document.paragraphs for s in split_sentences(p.text, abbreviations)
    ]
    groups = greedy_groups([word_count(s) for s in sentences], target_words)
    return [
        _make_chunk(
            ChunkLevel.MULTI_SENTENCE,
            " ".join(sentences[a : b + 1]),
            Provenance(document.doc_id, sentence_range=(a, b)),
            vanilla=True,
        )
        for a, b in groups
    ]


def segment_document(
    document: Document,
    cfg: SegmenterConfig = SegmenterConfig(),
    *,
    vanilla: bool = False,
    abbreviations: frozenset[str] | None = None,
) -> list[Chunk]:
    """All chunks for one document, most abstract level first."""
    placeholders = make_summary_placeholders(document)
    chunks = [placeholders[-1], *placeholders[:-1]]
    chunks += segment_paragraphs(document)
    for s in document.sections:
        for p in s.paragraphs:
            chunks += segment_multi_sentence(
                p, cfg, doc_id=document.doc_id, section_index=s.section_index, abbreviations=abbreviations
            )
    if vanilla:
        chunks += segment_vanilla(document, cfg.vanilla_chunk_words, abbreviations)
    return chunks


def segment_corpus(
    documents: Iterable[Document], cfg: SegmenterConfig = SegmenterConfig(), *, vanilla: bool = False
) -> list[Chunk]:
    return [c for d in documents for c in segment_document(d, cfg, vanilla=vanilla)]
