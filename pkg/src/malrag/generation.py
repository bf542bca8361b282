"""Prompt assembly and answer generation through a chat backend."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .remote import ChatCompletionClient

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{(context|question)\}")


class TemplateError(ValueError):
    pass


class GenerationError(RuntimeError):
    def __init__(self, message: str, record: AnswerRecord | None = None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class ContextChunk:
    chunk_id: str
    level: str
    text: str


@dataclass(frozen=True)
class ChatRequest:
    """What a chat backend sees. Remote backends only use ``prompt``; the
    other fields let offline mocks answer without parsing it."""

    prompt: str
    question: str
    context: str
    chunk_ids: tuple[str, ...] = ()
    gold_context: bool = False


class ChatBackend(Protocol):
    backend_id: str

    def generate(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("{context}", "{question}"):
            n = self.text.count(name)
            if n != 1:
                raise TemplateError(f"template must contain {name} exactly once (found {n})")

    def render(self, context: str, question: str) -> str:
        body = _PLACEHOLDER.sub(lambda m: context if m.group(1) == "context" else question, self.text)
        if not self.examples:
            return body
        shots = "".join(f"Question: {q}\nAnswer: {a}\n\n" for q, a in self.examples)
        return shots + body

    @classmethod
    def default(cls, examples: Sequence[tuple[str, str]] = ()) -> PromptTemplate:
        text = resources.files("malrag").joinpath("data/prompts/answer.txt").read_text(encoding="utf-8")
        return cls(text, tuple(examples))

    @classmethod
    def from_files(cls, template: str | Path | None, examples: str | Path | None = None) -> PromptTemplate:
        shots = load_examples(examples) if examples else ()
        if template is None:
            return cls.default(shots)
        return cls(Path(template).read_text(encoding="utf-8"), tuple(shots))


def load_examples(path: str | Path) -> list[tuple[str, str]]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            out.append((rec["question"], rec["answer"]))
        except KeyError as exc:
            raise ValueError(f"{path}:{n}: missing field {exc}") from None
    return out


@dataclass
class AnswerRecord:
    question: str
    answer: str
    backend_id: str
    prompt_bytes: int
    chunk_ids: list[str] = field(default_factory=list)
    question_id: str | None = None
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "answer": self.answer,
            "backend_id": self.backend_id,
            "prompt_bytes": self.prompt_bytes,
            "chunk_ids": list(self.chunk_ids),
            "failed": self.failed,
            "error": self.error,
        }


def assemble_context(chunks: Sequence[ContextChunk]) -> str:
    if not chunks:
        raise ValueError("cannot assemble context from an empty selection")
    return "\n\n".join(f"[chunk {c.chunk_id} | level {c.level}]\n{c.text}" for c in chunks)


def generate_answer(
    question: str,
    context: str,
    template: PromptTemplate,
    backend: ChatBackend,
    *,
    chunk_ids: Sequence[str] = (),
    question_id: str | None = None,
    gold_context: bool = False,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> AnswerRecord:
    """Render the prompt and call ``backend`` once, retrying failures with
    exponential backoff up to ``attempts`` times in total."""
    if not isinstance(template, PromptTemplate):
        raise TemplateError("template must be a PromptTemplate")
    prompt = template.render(context, question)
    req = ChatRequest(prompt, question, context, tuple(chunk_ids), gold_context)
    record = AnswerRecord(
        question, "", backend.backend_id, len(prompt.encode("utf-8")), list(chunk_ids), question_id
    )
    last: BaseException | None = None
    for attempt in range(attempts):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            answer = backend.generate(req)
        except Exception as exc:
            logger.warning("chat backend attempt %d/%d failed: %s", attempt + 1, attempts, exc)
            last = exc
            continue
        if not answer or not answer.strip():
            record.failed, record.error = True, "backend returned an empty answer"
            raise GenerationError(record.error, record)
        record.answer = answer.strip()
        return record
    record.failed, record.error = True, f"backend failed after {attempts} attempts: {last}"
    raise GenerationError(record.error, record) from last


# -- backends -----------------------------------------------------------------


@dataclass
class EchoBackend:
    """Answers with the question, verbatim."""

    backend_id: str = "echo-question"

    def generate(self, request: ChatRequest) -> str:
        return request.question


@dataclass
class EchoContextBackend:
    backend_id: str = "echo-context"

    def generate(self, request: ChatRequest) -> str:
        return request.context


def question_key(question: str) -> str:
    return hashlib.sha256(question.strip().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScriptedAnswer:
    answer: str
    requires_any: frozenset[str] = frozenset()


@dataclass
class ScriptedBackend:
    """Canned answers keyed by question hash.

    An entry with ``requires_any`` is answered only when one of those chunk ids
    is in the context, or when the context is the gold answer; otherwise the
    backend returns ``fallback``.
    """

    script: dict[str, ScriptedAnswer] = field(default_factory=dict)
    fallback: str = "The context does not contain the answer."
    backend_id: str = "scripted"

    def add(self, question: str, answer: str, requires_any: Sequence[str] = ()) -> None:
        self.script[question_key(question)] = ScriptedAnswer(answer, frozenset(requires_any))

    def generate(self, request: ChatRequest) -> str:
        entry = self.script.get(question_key(request.question))
        if entry is None:
            return self.fallback
        if entry.requires_any and not request.gold_context:
            if entry.requires_any.isdisjoint(request.chunk_ids):
                return self.fallback
        return entry.answer

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        """Load newline-delimited {question, answer, requires_any?} records."""
        self = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                self.add(rec["question"], rec["answer"], rec.get("requires_any", ()))
        return self


@dataclass
class HttpChatBackend:
    client: ChatCompletionClient

    @property
    def backend_id(self) -> str:
        return f"http-chat:{self.client.model}"

    def generate(self, request: ChatRequest) -> str:
        return self.client.complete(request.prompt)
