"""Budgeted chunk selection, softmax weighting and cumulative-probability cutoff."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .index import ChunkDatabase, EmbedderBackend, score_all
from .segmenter import ALL_LEVELS, ChunkLevel

logger = logging.getLogger(__name__)

DEFAULT_BUDGET_WORDS = 10_000
DEFAULT_TAU = 0.5
# slack for float round-off in running sums compared against tau
_CUM_EPS = 1e-12


@dataclass(frozen=True)
class RetrieverConfig:
    budget_words: int = DEFAULT_BUDGET_WORDS
    tau: float | None = DEFAULT_TAU
    levels: frozenset[ChunkLevel] = ALL_LEVELS
    packing: str = "skip"
    vanilla: bool = False

    def __post_init__(self):
        if self.budget_words < 1:
            raise ValueError("budget_words must be >= 1")
        if self.tau is not None and not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if not self.levels:
            raise ValueError("levels must be non-empty")
        if self.packing not in ("skip", "stop"):
            raise ValueError("packing must be 'skip' or 'stop'")
        object.__setattr__(self, "levels", frozenset(self.levels))

    def to_dict(self) -> dict:
        return {
            "budget_words": self.budget_words,
            "tau": self.tau,
            "levels": sorted((lvl.value for lvl in self.levels), key=lambda v: -ChunkLevel(v).rank),
            "packing": self.packing,
            "vanilla": self.vanilla,
        }


@dataclass(frozen=True)
class Candidate:
    chunk_id: str
    level: ChunkLevel
    similarity: float
    words: int


@dataclass(frozen=True)
class SelectedChunk:
    chunk_id: str
    level: ChunkLevel
    similarity: float
    probability: float
    cumulative_probability: float
    words: int

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "level": self.level.value,
            "similarity": self.similarity,
            "probability": self.probability,
            "cumulative_probability": self.cumulative_probability,
            "words": self.words,
        }


@dataclass
class RetrievalResult:
    query: str
    selected: list[SelectedChunk]
    budget_selected: list[SelectedChunk]
    config: RetrieverConfig
    forced_first: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def total_words(self) -> int:
        return sum(s.words for s in self.selected)

    @property
    def k_budget_selected(self) -> int:
        return len(self.budget_selected)

    @property
    def chunk_ids(self) -> list[str]:
        return [s.chunk_id for s in self.selected]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "selected": [s.to_dict() for s in self.selected],
            "total_words": self.total_words,
            "k_budget_selected": self.k_budget_selected,
            "budget_selected": [s.to_dict() for s in self.budget_selected],
            "forced_first": self.forced_first,
            "warnings": list(self.warnings),
            "config": self.config.to_dict(),
        }


def select_by_budget(
    scored: Sequence[tuple[str, float]], db: ChunkDatabase, budget_words: int, packing: str = "skip"
) -> list[Candidate]:
    """Walk ``scored`` in order taking every chunk that still fits the budget.

    ``packing="skip"`` passes over a chunk that does not fit and keeps going;
    ``"stop"`` ends selection at the first one.
    """
    out = []
    remaining = budget_words
    for cid, sim in scored:
        c = db[cid]
        if c.words <= remaining:
            out.append(Candidate(cid, c.level, sim, c.words))
            remaining -= c.words
        elif packing == "stop":
            break
    return out


def softmax_probabilities(similarities: Sequence[float]) -> list[float]:
    if not len(similarities):
        raise ValueError("softmax over an empty selection")
    m = max(similarities)
    exps = [math.exp(s - m) for s in similarities]
    z = math.fsum(exps)
    return [e / z for e in exps]


def apply_threshold(probabilities: Sequence[float], tau: float | None) -> tuple[int, bool]:
    """Length of the kept prefix, and whether the first item was kept only
    because it alone exceeds ``tau``."""
    if tau is None:
        return len(probabilities), False
    cum = 0.0
    n = 0
    for p in probabilities:
        if cum + p > tau + _CUM_EPS:
            break
        cum += p
        n += 1
    if n == 0 and len(probabilities):
        return 1, True
    return n, False


def rank_candidates(candidates: Sequence[Candidate]) -> list[SelectedChunk]:
    """Attach softmax probabilities and running sums, descending by probability.

    Candidates arrive in descending similarity with chunk_id tie order, which
    is already descending probability; a stable sort keeps that order.
    """
    probs = softmax_probabilities([c.similarity for c in candidates])
    order = sorted(range(len(candidates)), key=lambda i: -probs[i])
    out = []
    cum = 0.0
    for i in order:
        c = candidates[i]
        cum += probs[i]
        out.append(SelectedChunk(c.chunk_id, c.level, c.similarity, probs[i], cum, c.words))
    return out


def retrieve(query: str, db: ChunkDatabase, embedder: EmbedderBackend, cfg: RetrieverConfig = RetrieverConfig()) -> RetrievalResult:
    scored = score_all(db, query, embedder, cfg.levels, vanilla=cfg.vanilla)
    return retrieve_scored(query, scored, db, cfg)


def retrieve_scored(
    query: str, scored: Sequence[tuple[str, float]], db: ChunkDatabase, cfg: RetrieverConfig
) -> RetrievalResult:
    candidates = select_by_budget(scored, db, cfg.budget_words, cfg.packing)
    if not candidates:
        msg = f"no chunk fits the {cfg.budget_words}-word budget" if scored else "no chunks to score"
        logger.warning(msg)
        return RetrievalResult(query, [], [], cfg, warnings=[msg])
    ranked = rank_candidates(candidates)
    n, forced = apply_threshold([r.probability for r in ranked], cfg.tau)
    warnings = []
    if forced:
        warnings.append(f"top chunk probability {ranked[0].probability:.6f} exceeds tau; kept anyway")
    return RetrievalResult(query, ranked[:n], ranked, cfg, forced, warnings)


def levels_from_names(names: Iterable[str]) -> frozenset[ChunkLevel]:
    out = set()
    for name in names:
        if name.strip().lower() == "all":
            out |= ALL_LEVELS
        else:
            out.add(ChunkLevel.parse(name))
    return frozenset(out)
