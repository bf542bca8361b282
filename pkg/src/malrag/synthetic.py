"""Deterministic synthetic corpora and planted Q/A sets for offline runs."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Document, build_document
from .evaluation import QAPair
from .generation import ScriptedBackend
from .segmenter import Chunk, ChunkLevel, split_sentences

_ONSETS = ["b", "c", "d", "f", "g", "gl", "k", "l", "m", "n", "p", "r", "s", "st", "t", "tr", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u", "ia", "eo"]
_CODAS = ["", "n", "s", "r", "l", "x", "m", "th"]
_EXTRAS = ["e.g.", "Fig.", "et al.", "approx.", "i.e.", "(n=12)", "3.5", "U.S.", "Dr."]


def make_vocabulary(rng: random.Random, size: int) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        n = rng.randint(2, 3)
        words.add("".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(n)))
    return sorted(words)


@dataclass
class SentenceFactory:
    rng: random.Random
    vocab: list[str]
    min_words: int = 6
    max_words: int = 14
    noisy: bool = False

    def sentence(self) -> str:
        n = self.rng.randint(self.min_words, self.max_words)
        words = [self.rng.choice(self.vocab) for _ in range(n)]
        if self.noisy and self.rng.random() < 0.3:
            words.insert(self.rng.randrange(1, n), self.rng.choice(_EXTRAS))
        words[0] = words[0].capitalize()
        end = self.rng.choice(".!?") if self.noisy and self.rng.random() < 0.1 else "."
        return " ".join(words) + end

    def paragraph(self, n_sentences: int) -> str:
        sents = [self.sentence() for _ in range(n_sentences)]
        if not self.noisy:
            return " ".join(sents)
        seps = [self.rng.choice([" ", "  ", "\n", " \t "]) for _ in sents[1:]]
        out = sents[0]
        for sep, s in zip(seps, sents[1:]):
            out += sep + s
        return self.rng.choice(["", " ", "\n"]) + out + self.rng.choice(["", " "])


def random_corpus(
    n_docs: int,
    seed: int = 0,
    *,
    sections: tuple[int, int] = (1, 5),
    paragraphs: tuple[int, int] = (1, 5),
    sentences: tuple[int, int] = (1, 12),
    noisy: bool = True,
    vocab_size: int = 3000,
) -> list[Document]:
    rng = random.Random(seed)
    f = SentenceFactory(rng, make_vocabulary(rng, vocab_size), noisy=noisy)
    docs = []
    for i in range(n_docs):
        secs = []
        for s in range(rng.randint(*sections)):
            paras = [f.paragraph(rng.randint(*sentences)) for _ in range(rng.randint(*paragraphs))]
            secs.append((f"Section {s}", paras))
        docs.append(build_document(f"doc{i:03d}", f"Document {i}", secs))
    return docs


def structured_corpus(
    layout: list[list[int]], seed: int = 0, sentences_per_paragraph: int = 6, vocab_size: int = 4000
) -> list[Document]:
    """``layout[d][s]`` is the paragraph count of section ``s`` in document ``d``.
    Sentences are drawn from a large vocabulary so distinct chunks rarely share
    a bag of words."""
    rng = random.Random(seed)
    f = SentenceFactory(rng, make_vocabulary(rng, vocab_size), min_words=8, max_words=12)
    docs = []
    for d, secs in enumerate(layout):
        sections = [
            (f"Section {s}", [f.paragraph(sentences_per_paragraph) for _ in range(n)]) for s, n in enumerate(secs)
        ]
        docs.append(build_document(f"doc{d:02d}", f"Synthetic article {d}", sections))
    return docs


TOY_LAYOUT = [[3, 3, 2], [3, 3], [3, 3]]


def toy_corpus(seed: int = 7) -> list[Document]:
    """Three documents, seven sections, twenty paragraphs."""
    return structured_corpus(TOY_LAYOUT, seed)


@dataclass
class PlantedSet:
    pairs: list[QAPair]
    required: dict[str, str]
    chat: ScriptedBackend = field(default_factory=ScriptedBackend)

    def script_records(self) -> list[dict]:
        return [
            {"question": p.question, "answer": p.ground_truth, "requires_any": [self.required[p.question_id]]}
            for p in self.pairs
        ]


def _unique_text(chunks: list[Chunk]) -> dict[str, Chunk]:
    seen: dict[str, list[Chunk]] = {}
    for c in chunks:
        seen.setdefault(c.text, []).append(c)
    return {t: cs[0] for t, cs in seen.items() if len(cs) == 1}


def planted_self_queries(chunks: list[Chunk], per_level: int, seed: int = 0) -> list[tuple[str, Chunk]]:
    """Queries that copy one chunk's text verbatim, ``per_level`` from each level.
    Only chunks whose text occurs once in the database are eligible."""
    rng = random.Random(seed)
    unique = _unique_text([c for c in chunks if not c.vanilla])
    out = []
    for lvl in (ChunkLevel.DOCUMENT, ChunkLevel.SECTION, ChunkLevel.PARAGRAPH, ChunkLevel.MULTI_SENTENCE):
        pool = sorted((c for c in unique.values() if c.level is lvl), key=lambda c: c.chunk_id)
        if len(pool) < per_level:
            raise ValueError(f"only {len(pool)} unique {lvl.value} chunks for {per_level} planted queries")
        out += [(c.text, c) for c in rng.sample(pool, per_level)]
    return out


def mixed_granularity_questions(chunks: list[Chunk], n_each: int, seed: int = 0) -> PlantedSet:
    """Half the questions need a whole section's key information (the section
    summary chunk), half need one fact sentence (its multi-sentence chunk).

    The scripted chat backend answers a question with its ground truth only
    when the required chunk is in the context.
    """
    rng = random.Random(seed)
    sections = sorted((c for c in chunks if c.level is ChunkLevel.SECTION and not c.vanilla), key=lambda c: c.chunk_id)
    multis = sorted(
        (c for c in chunks if c.level is ChunkLevel.MULTI_SENTENCE and not c.vanilla), key=lambda c: c.chunk_id
    )
    summary_texts = " ".join(c.text for c in chunks if c.is_summary)
    pairs, required = [], {}
    chat = ScriptedBackend()
    for i, sec in enumerate(rng.sample(sections, n_each)):
        qid = f"sec{i:02d}"
        q = f"Summarize the key findings: {sec.text}"
        pairs.append(QAPair(qid, q, sec.text, {"doc_id": sec.provenance.doc_id, "level": "section"}))
        required[qid] = sec.chunk_id
    candidates = []
    for m in multis:
        for s in split_sentences(m.text):
            # facts that also appear in a summary would be answerable from it
            if s not in summary_texts:
                candidates.append((s, m))
    for i, (fact, m) in enumerate(rng.sample(candidates, n_each)):
        qid = f"fact{i:02d}"
        q = f"What is reported about: {fact}"
        pairs.append(QAPair(qid, q, fact, {"doc_id": m.provenance.doc_id, "level": "multi-sentence"}))
        required[qid] = m.chunk_id
    for p in pairs:
        chat.add(p.question, p.ground_truth, [required[p.question_id]])
    return PlantedSet(pairs, required, chat)
