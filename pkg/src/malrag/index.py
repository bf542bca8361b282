"""Embedding backends, the chunk database and exhaustive cosine scoring."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Protocol, Sequence

import numpy as np

from .corpus import word_count
from .remote import EmbeddingClient
from .segmenter import ALL_LEVELS, Chunk, ChunkLevel

NORM_TOLERANCE = 1e-6
MOCK_HASH_SEED = 0x9E3779B97F4A7C15


class EmbedderBackend(Protocol):
    backend_id: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[Sequence[float]]: ...


class EmbeddingError(RuntimeError):
    """Embedding backend failure; ``embed_all`` can be re-run to resume."""


class DimensionMismatch(ValueError):
    pass


class ZeroVectorError(ValueError):
    pass


class FinalizationError(RuntimeError):
    pass


@dataclass
class HashingEmbedder:
    """Hashed bag of lowercase whitespace tokens, L2-normalized.

    Buckets come from keyed BLAKE2b so vectors are identical on every platform.
    """

    dimension: int = 256
    seed: int = MOCK_HASH_SEED

    @property
    def backend_id(self) -> str:
        return f"hash-bow-d{self.dimension}-s{self.seed:016x}"

    def _bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self.seed.to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little") % self.dimension

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            v = np.zeros(self.dimension, dtype=np.float64)
            for tok in text.lower().split():
                v[self._bucket(tok)] += 1.0
            n = np.linalg.norm(v)
            out.append(v / n if n > 0 else v)
        return out


@dataclass
class HttpEmbedder:
    client: EmbeddingClient
    dimension: int

    @property
    def backend_id(self) -> str:
        return f"http-embed:{self.client.model}"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return self.client.embed(list(texts))


def cosine_similarity(q: Sequence[float], c: Sequence[float]) -> float:
    q = np.asarray(q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if q.shape != c.shape:
        raise DimensionMismatch(f"dimension {q.shape} vs {c.shape}")
    nq, nc = np.linalg.norm(q), np.linalg.norm(c)
    if nq == 0 or nc == 0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(q, c) / (nq * nc), -1.0, 1.0))


def unit_vector(vec: Sequence[float], dimension: int, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (dimension,):
        raise DimensionMismatch(f"{what}: expected dimension {dimension}, got {v.shape[0] if v.ndim else 0}")
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ZeroVectorError(f"{what}: embedding is zero or non-finite")
    return v / n


@dataclass
class ChunkDatabase:
    """All chunks across the four levels plus one unit vector per chunk.

    Vectors are held as float32, the on-disk precision, so a database loaded
    from a store scores identically to the one that wrote it.
    """

    chunks: list[Chunk] = field(default_factory=list)
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    backend_id: str | None = None
    dimension: int | None = None
    finalized: bool = False

    def __post_init__(self):
        self._by_id: dict[str, Chunk] = {}
        for c in self.chunks:
            if c.chunk_id in self._by_id:
                raise ValueError(f"duplicate chunk_id {c.chunk_id!r}")
            self._by_id[c.chunk_id] = c

    def __len__(self) -> int:
        return len(self.chunks)

    def __getitem__(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._by_id

    def replace_chunks(self, chunks: Iterable[Chunk]) -> None:
        if self.finalized:
            raise FinalizationError("database is finalized")
        for c in chunks:
            if c.chunk_id not in self._by_id:
                raise KeyError(c.chunk_id)
            self._by_id[c.chunk_id] = c
        self.chunks = [self._by_id[c.chunk_id] for c in self.chunks]

    def placeholders(self) -> list[str]:
        return [c.chunk_id for c in self.chunks if c.is_placeholder]

    def finalize(self) -> ChunkDatabase:
        if self.finalized:
            return self
        pending = self.placeholders()
        if pending:
            raise FinalizationError(f"unfilled placeholder {pending[0]!r} ({len(pending)} total)")
        missing = [c.chunk_id for c in self.chunks if c.chunk_id not in self.vectors]
        if missing:
            raise FinalizationError(f"chunk {missing[0]!r} has no vector ({len(missing)} total)")
        extra = set(self.vectors) - set(self._by_id)
        if extra:
            raise FinalizationError(f"vector for unknown chunk {sorted(extra)[0]!r}")
        for c in self.chunks:
            if c.words != word_count(c.text):
                raise FinalizationError(f"chunk {c.chunk_id!r} word count is stale")
        self._build_matrix()
        self.finalized = True
        return self

    def _build_matrix(self) -> None:
        n, d = len(self.chunks), self.dimension or 0
        self._ids = [c.chunk_id for c in self.chunks]
        self._matrix = np.empty((n, d), dtype=np.float64)
        for i, cid in enumerate(self._ids):
            self._matrix[i] = self.vectors[cid]
        self._levels = np.array([c.level.rank for c in self.chunks], dtype=np.int8)
        self._vanilla = np.array([c.vanilla for c in self.chunks], dtype=bool)
        self._id_rank = np.empty(n, dtype=np.int64)
        self._id_rank[np.argsort(np.array(self._ids, dtype=object), kind="stable")] = np.arange(n)

    def level_stats(self, vanilla: bool = False) -> dict[ChunkLevel, tuple[int, int]]:
        """Per level: (count, total words)."""
        stats = {lvl: (0, 0) for lvl in ChunkLevel}
        for c in self.chunks:
            if c.vanilla == vanilla:
                n, w = stats[c.level]
                stats[c.level] = (n + 1, w + c.words)
        return stats


def embed_all(
    db: ChunkDatabase,
    backend: EmbedderBackend,
    batch_size: int = 64,
    *,
    on_batch: Callable[[list[tuple[str, np.ndarray]]], None] | None = None,
) -> ChunkDatabase:
    """Give every chunk a unit vector, in chunk order, ``batch_size`` at a time.

    Chunks that already carry a vector from the same backend are skipped, so a
    failed run resumes after its last completed batch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    pending = db.placeholders()
    if pending:
        raise FinalizationError(f"cannot embed: unfilled placeholder {pending[0]!r}")
    if db.backend_id != backend.backend_id or db.dimension != backend.dimension:
        db.vectors.clear()
        db.backend_id, db.dimension = backend.backend_id, backend.dimension

    todo = [c for c in db.chunks if c.chunk_id not in db.vectors]
    for start in range(0, len(todo), batch_size):
        batch = todo[start : start + batch_size]
        try:
            raw = backend.embed([c.text for c in batch])
        except Exception as exc:
            raise EmbeddingError(f"embedding batch starting at {batch[0].chunk_id!r} failed: {exc}") from exc
        if len(raw) != len(batch):
            raise EmbeddingError(f"backend returned {len(raw)} vectors for {len(batch)} texts")
        done = []
        for c, vec in zip(batch, raw):
            v = unit_vector(vec, backend.dimension, f"chunk {c.chunk_id!r}").astype(np.float32)
            done.append((c.chunk_id, v))
        for cid, v in done:
            db.vectors[cid] = v
        if on_batch is not None:
            on_batch(done)
    return db


def embed_query(query: str, backend: EmbedderBackend) -> np.ndarray:
    try:
        (raw,) = backend.embed([query])
    except (ZeroVectorError, DimensionMismatch):
        raise
    except Exception as exc:
        raise EmbeddingError(f"query embedding failed: {exc}") from exc
    return unit_vector(raw, backend.dimension, "query")


_SCORE_BLOCK = 65536


def score_all(
    db: ChunkDatabase,
    query: str,
    backend: EmbedderBackend,
    levels: Iterable[ChunkLevel] = ALL_LEVELS,
    *,
    vanilla: bool = False,
) -> list[tuple[str, float]]:
    """Cosine similarity of ``query`` to every chunk in ``levels``.

    Sorted by descending similarity, ties by ascending chunk_id. With
    ``vanilla=True`` only the baseline population is scored.
    """
    if not db.finalized:
        raise FinalizationError("database must be finalized before scoring")
    levels = frozenset(levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    if backend.backend_id != db.backend_id:
        raise ValueError(f"query embedder {backend.backend_id!r} does not match index {db.backend_id!r}")
    q = embed_query(query, backend)
    return score_vector(db, q, levels, vanilla=vanilla)


def score_vector(
    db: ChunkDatabase, q: np.ndarray, levels: frozenset[ChunkLevel], *, vanilla: bool = False
) -> list[tuple[str, float]]:
    mask = np.isin(db._levels, [lvl.rank for lvl in levels]) & (db._vanilla == vanilla)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return []
    sims = np.empty(idx.size, dtype=np.float64)
    # row-wise reductions keep each score independent of its row position
    for s in range(0, idx.size, _SCORE_BLOCK):
        rows = idx[s : s + _SCORE_BLOCK]
        sims[s : s + rows.size] = (db._matrix[rows] * q).sum(axis=1)
    np.clip(sims, -1.0, 1.0, out=sims)
    order = np.lexsort((db._id_rank[idx], -sims))
    return [(db._ids[idx[i]], float(sims[i])) for i in order]


# -- vector store file ----------------------------------------------------------

MAGIC = b"MALV"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class VectorFileError(ValueError):
    pass


def _write_str(f: BinaryIO, s: str) -> None:
    b = s.encode("utf-8")
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def _read_str(f: BinaryIO) -> str:
    raw = f.read(4)
    if len(raw) != 4:
        raise VectorFileError("truncated string length")
    (n,) = struct.unpack("<I", raw)
    b = f.read(n)
    if len(b) != n:
        raise VectorFileError("truncated string")
    return b.decode("utf-8")


class VectorFileWriter:
    """Appends records and keeps the header count in step, so an interrupted
    write leaves a readable prefix."""

    def __init__(self, path: str | Path, backend_id: str, dimension: int):
        self.path = Path(path)
        self.dimension = dimension
        self.count = 0
        with open(self.path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, dimension, 0))
            _write_str(f, backend_id)

    @classmethod
    def resume(cls, path: str | Path) -> VectorFileWriter:
        backend_id, dimension, ids, _ = read_vectors(path)
        self = cls.__new__(cls)
        self.path, self.dimension, self.count = Path(path), dimension, len(ids)
        end = _HEADER.size + 4 + len(backend_id.encode("utf-8"))
        end += sum(4 + len(i.encode("utf-8")) + 4 * dimension for i in ids)
        with open(self.path, "r+b") as f:
            f.truncate(end)
        return self

    def append(self, items: Iterable[tuple[str, Sequence[float]]]) -> None:
        items = list(items)
        with open(self.path, "r+b") as f:
            f.seek(0, 2)
            for cid, vec in items:
                v = np.asarray(vec, dtype="<f4")
                if v.shape != (self.dimension,):
                    raise DimensionMismatch(f"chunk {cid!r}: expected dimension {self.dimension}")
                _write_str(f, cid)
                f.write(v.tobytes())
            f.flush()
            self.count += len(items)
            f.seek(_HEADER.size - 8)
            f.write(struct.pack("<Q", self.count))


def write_vectors(path: str | Path, backend_id: str, dimension: int, items: Iterable[tuple[str, Sequence[float]]]) -> None:
    VectorFileWriter(path, backend_id, dimension).append(items)


def read_vectors(path: str | Path) -> tuple[str, int, list[str], np.ndarray]:
    """Return (backend_id, dimension, chunk ids, float32 matrix)."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise VectorFileError("truncated header")
        magic, version, dimension, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise VectorFileError(f"bad magic {magic!r}")
        if version != VERSION:
            raise VectorFileError(f"unsupported version {version}")
        backend_id = _read_str(f)
        ids = []
        mat = np.empty((count, dimension), dtype=np.float32)
        for i in range(count):
            ids.append(_read_str(f))
            raw = f.read(4 * dimension)
            if len(raw) != 4 * dimension:
                raise VectorFileError(f"truncated vector for record {i}")
            mat[i] = np.frombuffer(raw, dtype="<f4")
    return backend_id, dimension, ids, mat
