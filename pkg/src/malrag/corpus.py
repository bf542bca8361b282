"""Document tree and the newline-delimited JSON corpus format."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

_WS = re.compile(r"\s+")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Paragraph:
    paragraph_index: int
    text: str


@dataclass(frozen=True)
class Section:
    section_index: int
    heading: str
    paragraphs: tuple[Paragraph, ...]


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sections: tuple[Section, ...]

    @property
    def paragraphs(self) -> list[Paragraph]:
        return [p for s in self.sections for p in s.paragraphs]


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def word_count(text: str) -> int:
    """Number of maximal runs of non-whitespace characters."""
    return len(text.split())


def build_document(doc_id: str, title: str, sections: Iterable[tuple[str, Iterable[str]]]) -> Document:
    """Build a normalized Document from plain (heading, paragraph texts) pairs."""
    built = []
    for n, (heading, paras) in enumerate(sections):
        ps = tuple(Paragraph(k, normalize_whitespace(t)) for k, t in enumerate(paras))
        built.append(Section(n, normalize_whitespace(heading), ps))
    doc = Document(doc_id, title, tuple(built))
    validate_document(doc)
    return doc


def validate_document(doc: Document, line: int | None = None) -> None:
    if not doc.doc_id:
        raise CorpusError("doc_id must be non-empty", line, "doc_id")
    if not doc.sections:
        raise CorpusError(f"document {doc.doc_id!r} has zero sections", line, "sections")
    for n, sec in enumerate(doc.sections):
        if sec.section_index != n:
            raise CorpusError(f"section index {sec.section_index} at position {n}", line, "sections")
        if not sec.paragraphs:
            raise CorpusError(
                f"document {doc.doc_id!r} section {n} has zero paragraphs", line, "paragraphs"
            )
        for k, p in enumerate(sec.paragraphs):
            if p.paragraph_index != k:
                raise CorpusError(f"paragraph index {p.paragraph_index} at position {k}", line, "paragraphs")
            if not p.text:
                raise CorpusError(
                    f"document {doc.doc_id!r} section {n} paragraph {k} is empty", line, "paragraphs"
                )


def _parse_record(raw: str, line: int) -> Document:
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON: {exc.msg}", line) from None
    if not isinstance(rec, dict):
        raise CorpusError("record must be an object", line)
    for key, kind in (("doc_id", str), ("title", str), ("sections", list)):
        if key not in rec:
            raise CorpusError("missing field", line, key)
        if not isinstance(rec[key], kind):
            raise CorpusError(f"expected {kind.__name__}", line, key)
    sections = []
    for n, sec in enumerate(rec["sections"]):
        if not isinstance(sec, dict):
            raise CorpusError(f"section {n} must be an object", line, "sections")
        heading = sec.get("heading", "")
        paras = sec.get("paragraphs")
        if not isinstance(heading, str):
            raise CorpusError(f"section {n}: expected str", line, "heading")
        if not isinstance(paras, list) or not all(isinstance(p, str) for p in paras):
            raise CorpusError(f"section {n}: expected list of str", line, "paragraphs")
        sections.append((heading, paras))
    try:
        return build_document(rec["doc_id"], rec["title"], sections)
    except CorpusError as exc:
        raise CorpusError(str(exc), line) from None


def parse_corpus_file(data: bytes) -> list[Document]:
    """Parse newline-delimited corpus records, preserving input order."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"not valid UTF-8 at byte {exc.start}") from None
    docs: list[Document] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        doc = _parse_record(raw, lineno)
        if doc.doc_id in seen:
            raise CorpusError(
                f"duplicate doc_id {doc.doc_id!r} (first seen on line {seen[doc.doc_id]})", lineno, "doc_id"
            )
        seen[doc.doc_id] = lineno
        docs.append(doc)
    return docs


def load_corpus(path: str | Path) -> list[Document]:
    return parse_corpus_file(Path(path).read_bytes())


def document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "sections": [
            {"heading": s.heading, "paragraphs": [p.text for p in s.paragraphs]} for s in doc.sections
        ],
    }


def serialize_corpus(docs: Iterable[Document]) -> bytes:
    lines = [json.dumps(document_to_record(d), ensure_ascii=False, separators=(",", ":")) for d in docs]
    return "".join(line + "\n" for line in lines).encode("utf-8")
