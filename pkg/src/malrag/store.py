"""On-disk chunk store.

A store is a directory filled stage by stage::

    chunks.jsonl      segmented chunks, summary placeholders still empty
    summaries.jsonl   one line per filled summary chunk, appended per document
    vectors.malv      binary vectors, appended per embedding batch
    manifest.json     written last; its presence marks the store finalized

Re-running ``build_store`` resumes from whichever files already exist.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .config import PipelineConfig, make_embedder, make_extractor
from .corpus import CorpusError, Document, load_corpus
from .index import (
    ChunkDatabase,
    EmbeddingError,
    VectorFileWriter,
    embed_all,
    read_vectors,
)
from .segmenter import Chunk, ChunkLevel, segment_corpus
from .summarizer import SummaryRecord, fill_placeholders

logger = logging.getLogger(__name__)

STORE_VERSION = 1
CHUNKS = "chunks.jsonl"
SUMMARIES = "summaries.jsonl"
VECTORS = "vectors.malv"
MANIFEST = "manifest.json"
STATE = "state.json"

STAGE_EXIT_CODES = {
    "parse": 2,
    "summarize": 3,
    "embed": 4,
    "retrieve": 5,
    "generate": 6,
    "evaluate": 7,
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, doc_id: str | None = None):
        where = f" [document {doc_id}]" if doc_id else ""
        super().__init__(f"{stage}: {message}{where}")
        self.stage = stage
        self.doc_id = doc_id

    @property
    def exit_code(self) -> int:
        return STAGE_EXIT_CODES.get(self.stage, 1)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


def round_half_up(total: int, count: int) -> int:
    return (2 * total + count) // (2 * count) if count else 0


def level_table(db: ChunkDatabase, vanilla: bool = False) -> dict[str, dict]:
    return {
        lvl.value: {"count": n, "total_words": w, "avg_words": round_half_up(w, n)}
        for lvl, (n, w) in db.level_stats(vanilla).items()
        if not vanilla or n
    }


@dataclass
class ChunkStore:
    path: Path
    manifest: dict
    db: ChunkDatabase
    records: list[SummaryRecord]

    @classmethod
    def open(cls, path: str | Path) -> ChunkStore:
        """Load a finalized store and check it against its manifest."""
        path = Path(path)
        mpath = path / MANIFEST
        if not mpath.exists():
            raise StageError("retrieve", f"store {path} is not finalized (no {MANIFEST})")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("version") != STORE_VERSION:
            raise StageError("retrieve", f"unsupported store version {manifest.get('version')}")
        chunks = _load_chunks(path)
        filled, records = _load_summaries(path)
        chunks = [filled.get(c.chunk_id, c) for c in chunks]
        backend_id, dimension, ids, mat = read_vectors(path / VECTORS)
        db = ChunkDatabase(chunks, dict(zip(ids, mat)), backend_id, dimension)
        db.finalize()
        store = cls(path, manifest, db, records)
        store.check_manifest()
        return store

    def check_manifest(self) -> None:
        actual = level_table(self.db)
        for lvl, row in self.manifest["levels"].items():
            if actual.get(lvl, {}).get("count") != row["count"]:
                raise StageError(
                    "retrieve", f"manifest count for {lvl} ({row['count']}) != stored ({actual.get(lvl)})"
                )
        if len(self.records) != sum(self.manifest["levels"][lv.value]["count"] for lv in (ChunkLevel.DOCUMENT, ChunkLevel.SECTION)):
            raise StageError("retrieve", "summary record count does not match manifest")


def _load_chunks(path: Path) -> list[Chunk]:
    with open(path / CHUNKS, encoding="utf-8") as f:
        return [Chunk.from_dict(json.loads(line)) for line in f if line.strip()]


def _load_summaries(path: Path) -> tuple[dict[str, Chunk], list[SummaryRecord]]:
    filled: dict[str, Chunk] = {}
    records: list[SummaryRecord] = []
    p = path / SUMMARIES
    if not p.exists():
        return filled, records
    with open(p, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                # torn final line from an interrupted append
                logger.warning("ignoring truncated line in %s", p)
                break
            filled[rec["chunk"]["chunk_id"]] = Chunk.from_dict(rec["chunk"])
            records.append(SummaryRecord.from_dict(rec["record"]))
    return filled, records


def build_store(cfg: PipelineConfig) -> ChunkStore:
    """Parse, segment, summarize, embed and finalize; a no-op on a store that
    is already finalized with the same corpus and config."""
    if cfg.corpus is None or not Path(cfg.corpus).exists():
        raise StageError("parse", f"corpus file {cfg.corpus} not found")
    corpus_hash = sha256_file(Path(cfg.corpus))
    config_hash = cfg.config_hash()
    root = Path(cfg.store)

    if (root / MANIFEST).exists():
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
        if (manifest["corpus_hash"], manifest["config_hash"]) != (corpus_hash, config_hash):
            raise StageError("parse", f"store {root} is finalized for a different corpus or config")
        logger.info("store %s already finalized; nothing to do", root)
        return ChunkStore.open(root)

    try:
        documents = load_corpus(cfg.corpus)
    except CorpusError as exc:
        raise StageError("parse", str(exc)) from None
    if not documents:
        raise StageError("parse", f"corpus {cfg.corpus} contains no documents")

    root.mkdir(parents=True, exist_ok=True)
    state = {"corpus_hash": corpus_hash, "config_hash": config_hash}
    state_path = root / STATE
    if state_path.exists():
        if json.loads(state_path.read_text(encoding="utf-8")) != state:
            raise StageError("parse", f"partial store {root} was started with a different corpus or config")
    else:
        for name in (CHUNKS, SUMMARIES, VECTORS):
            (root / name).unlink(missing_ok=True)
        _atomic_write(state_path, json.dumps(state, sort_keys=True))

    if not (root / CHUNKS).exists():
        chunks = segment_corpus(documents, cfg.segmenter, vanilla=cfg.vanilla)
        _atomic_write(root / CHUNKS, _jsonl(c.to_dict() for c in chunks))
    chunks = _load_chunks(root)

    filled, records = _load_summaries(root)
    if records:
        # drop any torn tail before appending again
        _atomic_write(
            root / SUMMARIES,
            _jsonl({"chunk": filled[r.chunk_id].to_dict(), "record": r.to_dict()} for r in records),
        )
    chunks = [filled.get(c.chunk_id, c) for c in chunks]
    chunks, new_records = _summarize(documents, chunks, cfg, root)
    records += new_records

    db = ChunkDatabase(chunks)
    _embed(db, cfg, root)
    db.finalize()

    manifest = {
        "format": "malrag-store",
        "version": STORE_VERSION,
        "corpus_hash": corpus_hash,
        "config_hash": config_hash,
        "config": cfg.index_fingerprint(),
        "documents": len(documents),
        "extractor": records[0].backend_id if records else None,
        "embedder": db.backend_id,
        "dimension": db.dimension,
        "levels": level_table(db),
        "vanilla": level_table(db, vanilla=True) if cfg.vanilla else None,
        "summary_records": len(records),
        "files": {"chunks": CHUNKS, "summaries": SUMMARIES, "vectors": VECTORS},
    }
    _atomic_write(root / MANIFEST, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return ChunkStore(root, manifest, db, records)


def _summarize(
    documents: list[Document], chunks: list[Chunk], cfg: PipelineConfig, root: Path
) -> tuple[list[Chunk], list[SummaryRecord]]:
    backend = make_extractor(cfg.extractor)

    def persist(doc_id: str, filled: list[Chunk], recs: list[SummaryRecord]) -> None:
        with open(root / SUMMARIES, "a", encoding="utf-8") as f:
            f.write(_jsonl({"chunk": c.to_dict(), "record": r.to_dict()} for c, r in zip(filled, recs)))

    result = fill_placeholders(documents, chunks, backend, parallelism=cfg.parallelism, on_document=persist)
    if result.failed:
        doc_id, msg = next(iter(result.failed.items()))
        raise StageError(
            "summarize", f"{len(result.failed)} document(s) failed, first: {msg}; re-run to resume", doc_id
        )
    return result.chunks, result.records


def _embed(db: ChunkDatabase, cfg: PipelineConfig, root: Path) -> None:
    backend = make_embedder(cfg.embedder)
    vpath = root / VECTORS
    writer = None
    if vpath.exists():
        try:
            backend_id, dimension, ids, mat = read_vectors(vpath)
        except ValueError:
            backend_id = None
        if backend_id == backend.backend_id and dimension == backend.dimension:
            known = {c.chunk_id for c in db.chunks}
            db.backend_id, db.dimension = backend_id, dimension
            db.vectors.update((i, v) for i, v in zip(ids, mat) if i in known)
            writer = VectorFileWriter.resume(vpath)
    if writer is None:
        writer = VectorFileWriter(vpath, backend.backend_id, backend.dimension)
    try:
        embed_all(db, backend, cfg.batch_size, on_batch=writer.append)
    except EmbeddingError as exc:
        raise StageError("embed", f"{exc}; re-run to resume") from None
    except ValueError as exc:
        raise StageError("embed", str(exc)) from None
