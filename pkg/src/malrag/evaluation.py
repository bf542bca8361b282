"""Statement-level answer scoring: TP/FP/FN matching, F1 and context recall."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .remote import BackendError, ChatCompletionClient
from .segmenter import split_sentences

logger = logging.getLogger(__name__)


class StatementJudge(Protocol):
    backend_id: str

    def match(self, a: str, b: str) -> bool: ...


class JudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class QAPair:
    question_id: str
    question: str
    ground_truth: str
    provenance: dict | None = None

    def __post_init__(self):
        if not self.question.strip() or not self.ground_truth.strip():
            raise ValueError(f"{self.question_id}: question and ground_truth must be non-empty")

    def to_dict(self) -> dict:
        d = {"question_id": self.question_id, "question": self.question, "ground_truth": self.ground_truth}
        if self.provenance is not None:
            d["provenance"] = self.provenance
        return d


def load_qa_pairs(path: str | Path) -> list[QAPair]:
    out = []
    seen = set()
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pair = QAPair(str(rec["question_id"]), rec["question"], rec["ground_truth"], rec.get("provenance"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{n}: malformed Q/A record ({exc})") from None
        if pair.question_id in seen:
            raise ValueError(f"{path}:{n}: duplicate question_id {pair.question_id!r}")
        seen.add(pair.question_id)
        out.append(pair)
    return out


def normalize_statement(s: str) -> str:
    kept = "".join(ch for ch in s.lower() if not unicodedata.category(ch).startswith("P"))
    return " ".join(kept.split())


@dataclass
class ExactJudge:
    """Equality after lowercasing, dropping punctuation and collapsing spaces."""

    backend_id: str = "exact-normalized"

    def match(self, a: str, b: str) -> bool:
        return normalize_statement(a) == normalize_statement(b)


def _default_judge_template() -> str:
    return resources.files("malrag").joinpath("data/prompts/judge.txt").read_text(encoding="utf-8")


@dataclass
class HttpJudge:
    """LLM judge; not guaranteed symmetric in its arguments."""

    client: ChatCompletionClient
    template: str = field(default_factory=_default_judge_template)

    @property
    def backend_id(self) -> str:
        return f"http-judge:{self.client.model}"

    def match(self, a: str, b: str) -> bool:
        prompt = self.template.replace("{a}", a).replace("{b}", b)
        reply = self.client.complete(prompt).strip().upper()
        if reply.startswith("YES"):
            return True
        if reply.startswith("NO"):
            return False
        raise BackendError(f"judge reply is neither YES nor NO: {reply[:40]!r}")


def decompose_statements(text: str) -> list[str]:
    return split_sentences(text)


def count_matches(gt: Sequence[str], ans: Sequence[str], judge: StatementJudge) -> tuple[int, int, int]:
    """Greedy one-to-one matching: each answer statement, in order, takes the
    first still-unmatched ground-truth statement the judge accepts."""
    used = [False] * len(gt)
    tp = 0
    for a in ans:
        for j, g in enumerate(gt):
            if not used[j] and judge.match(g, a):
                used[j] = True
                tp += 1
                break
    return tp, len(ans) - tp, len(gt) - tp


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


def context_recall(gt: Sequence[str], context: str | Sequence[str], judge: StatementJudge) -> float:
    """Fraction of ground-truth statements matched by some context statement."""
    texts = [context] if isinstance(context, str) else list(context)
    ctx = [s for t in texts for s in split_sentences(t)]
    if not ctx:
        raise ValueError("context must be non-empty")
    if not gt:
        return 0.0
    supported = sum(1 for g in gt if any(judge.match(g, c) for c in ctx))
    return supported / len(gt)


@dataclass
class QuestionResult:
    question_id: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    f1: float = 0.0
    context_recall: float | None = None
    evaluated: bool = True
    answered: bool = True
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "f1": self.f1,
            "context_recall": self.context_recall,
            "evaluated": self.evaluated,
            "answered": self.answered,
            "error": self.error,
        }


@dataclass
class EvalReport:
    questions: list[QuestionResult]
    judge_id: str
    label: str = ""

    @property
    def evaluated(self) -> list[QuestionResult]:
        return [q for q in self.questions if q.evaluated]

    @property
    def excluded(self) -> int:
        return len(self.questions) - len(self.evaluated)

    @property
    def mean_f1(self) -> float:
        ev = self.evaluated
        return sum(q.f1 for q in ev) / len(ev) if ev else 0.0

    @property
    def mean_context_recall(self) -> float | None:
        vals = [q.context_recall for q in self.evaluated if q.context_recall is not None]
        return sum(vals) / len(vals) if vals else None

    def aggregate(self) -> dict:
        ev = self.evaluated
        return {
            "aggregate": True,
            "label": self.label,
            "judge": self.judge_id,
            "questions": len(self.questions),
            "evaluated": len(ev),
            "excluded": self.excluded,
            "mean_tp": sum(q.tp for q in ev) / len(ev) if ev else 0.0,
            "mean_fp": sum(q.fp for q in ev) / len(ev) if ev else 0.0,
            "mean_fn": sum(q.fn for q in ev) / len(ev) if ev else 0.0,
            "mean_f1": self.mean_f1,
            "mean_context_recall": self.mean_context_recall,
        }

    def to_records(self) -> list[dict]:
        return [q.to_dict() for q in self.questions] + [self.aggregate()]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())


def evaluate_question(
    pair: QAPair, answer: str | None, judge: StatementJudge, context: str | Sequence[str] | None = None
) -> QuestionResult:
    gt = decompose_statements(pair.ground_truth)
    res = QuestionResult(pair.question_id)
    try:
        if answer is None or not answer.strip():
            res.answered = False
            res.tp, res.fp, res.fn = 0, 0, len(gt)
        else:
            res.tp, res.fp, res.fn = count_matches(gt, decompose_statements(answer), judge)
        res.f1 = f1_score(res.tp, res.fp, res.fn)
        if context is not None and (context if isinstance(context, str) else any(context)):
            res.context_recall = context_recall(gt, context, judge)
    except Exception as exc:
        logger.warning("judge failed on %s: %s", pair.question_id, exc)
        return QuestionResult(pair.question_id, evaluated=False, error=f"judge failure: {exc}")
    return res


def evaluate_run(
    qa_pairs: Sequence[QAPair],
    answers: Mapping[str, str | None],
    judge: StatementJudge,
    contexts: Mapping[str, str | Sequence[str]] | None = None,
    *,
    label: str = "",
) -> EvalReport:
    """Score every question; a missing answer counts all ground truth as FN."""
    contexts = contexts or {}
    results = [
        evaluate_question(p, answers.get(p.question_id), judge, contexts.get(p.question_id)) for p in qa_pairs
    ]
    return EvalReport(results, judge.backend_id, label)
