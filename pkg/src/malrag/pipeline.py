"""Query, evaluation and statistics over a finalized chunk store."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .evaluation import EvalReport, QAPair, StatementJudge, evaluate_question
from .generation import (
    AnswerRecord,
    ChatBackend,
    ContextChunk,
    GenerationError,
    PromptTemplate,
    assemble_context,
    generate_answer,
)
from .index import EmbedderBackend, EmbeddingError, ZeroVectorError, DimensionMismatch
from .retriever import RetrievalResult, RetrieverConfig, retrieve
from .segmenter import ChunkLevel
from .store import ChunkStore, StageError

logger = logging.getLogger(__name__)

LEVEL_ORDER = (ChunkLevel.DOCUMENT, ChunkLevel.SECTION, ChunkLevel.PARAGRAPH, ChunkLevel.MULTI_SENTENCE)
LEVEL_LABELS = {
    ChunkLevel.DOCUMENT: "Document",
    ChunkLevel.SECTION: "Section",
    ChunkLevel.PARAGRAPH: "Paragraph",
    ChunkLevel.MULTI_SENTENCE: "Multi-sentence",
}


@dataclass
class QueryOutcome:
    answer: AnswerRecord
    retrieval: RetrievalResult | None
    context_texts: list[str]


def retrieve_for(store: ChunkStore, question: str, embedder: EmbedderBackend, cfg: RetrieverConfig) -> RetrievalResult:
    try:
        result = retrieve(question, store.db, embedder, cfg)
    except (EmbeddingError, ZeroVectorError, DimensionMismatch, ValueError) as exc:
        raise StageError("retrieve", str(exc)) from None
    if not result.selected:
        raise StageError("retrieve", "; ".join(result.warnings) or "empty selection")
    return result


def answer_question(
    store: ChunkStore,
    question: str,
    embedder: EmbedderBackend,
    chat: ChatBackend,
    template: PromptTemplate,
    cfg: RetrieverConfig,
    *,
    question_id: str | None = None,
    gold_answer: str | None = None,
) -> QueryOutcome:
    """Retrieve, assemble the context and generate. With ``gold_answer`` set
    the ground truth replaces retrieval as the context."""
    if gold_answer is not None:
        ctx = [ContextChunk(f"gold:{question_id or 'q'}", "gold", gold_answer)]
        retrieval = None
    else:
        retrieval = retrieve_for(store, question, embedder, cfg)
        ctx = [ContextChunk(s.chunk_id, s.level.value, store.db[s.chunk_id].text) for s in retrieval.selected]
    context = assemble_context(ctx)
    try:
        record = generate_answer(
            question,
            context,
            template,
            chat,
            chunk_ids=[c.chunk_id for c in ctx],
            question_id=question_id,
            gold_context=gold_answer is not None,
        )
    except GenerationError as exc:
        raise StageError("generate", str(exc)) from None
    return QueryOutcome(record, retrieval, [c.text for c in ctx])


@dataclass
class EvalRun:
    report: EvalReport
    outcomes: list[QueryOutcome | None]
    errors: dict[str, str]

    def audit_records(self) -> list[dict]:
        out = []
        for pair_id, o in zip((q.question_id for q in self.report.questions), self.outcomes):
            rec = {"question_id": pair_id}
            if o is None:
                rec["error"] = self.errors.get(pair_id)
            else:
                rec["answer"] = o.answer.to_dict()
                rec["retrieval"] = o.retrieval.to_dict() if o.retrieval else None
            out.append(rec)
        return out


def run_eval(
    store: ChunkStore,
    qa_pairs: Sequence[QAPair],
    embedder: EmbedderBackend,
    chat: ChatBackend,
    template: PromptTemplate,
    judge: StatementJudge,
    cfg: RetrieverConfig,
    *,
    gold_context: bool = False,
    parallelism: int = 1,
    label: str = "",
) -> EvalRun:
    """Retrieve, answer and score every question. Per-question failures are
    recorded as unanswered and the run continues."""
    errors: dict[str, str] = {}

    def one(pair: QAPair):
        try:
            o = answer_question(
                store,
                pair.question,
                embedder,
                chat,
                template,
                cfg,
                question_id=pair.question_id,
                gold_answer=pair.ground_truth if gold_context else None,
            )
        except StageError as exc:
            logger.warning("question %s failed: %s", pair.question_id, exc)
            errors[pair.question_id] = str(exc)
            return None, evaluate_question(pair, None, judge)
        return o, evaluate_question(pair, o.answer.answer, judge, o.context_texts)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(one, qa_pairs))
    questions = []
    for pair, (_, res) in zip(qa_pairs, results):
        if pair.question_id in errors and res.error is None:
            res.error = errors[pair.question_id]
        questions.append(res)
    report = EvalReport(questions, judge.backend_id, label)
    return EvalRun(report, [o for o, _ in results], errors)


def format_stats(levels: dict[str, dict]) -> str:
    """Four-row per-level table of chunk count and average word count."""
    rows = []
    for lvl in LEVEL_ORDER:
        row = levels.get(lvl.value)
        if row is None or row["count"] == 0:
            raise ValueError(f"invariant check failure: store has no {lvl.value} chunks")
        rows.append((LEVEL_LABELS[lvl], row["count"], row["avg_words"]))
    header = ("Chunks Level", "Num of chunk", "Avg. Length of chunk")
    w0 = max(len(header[0]), *(len(r[0]) for r in rows))
    w1 = max(len(header[1]), *(len(str(r[1])) for r in rows))
    w2 = len(header[2])
    lines = [f"{header[0]:<{w0}}  {header[1]:>{w1}}  {header[2]:>{w2}}"]
    lines += [f"{name:<{w0}}  {n:>{w1}}  {avg:>{w2}}" for name, n, avg in rows]
    return "\n".join(lines) + "\n"
