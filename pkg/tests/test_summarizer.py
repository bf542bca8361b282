import json

import httpx
import pytest

from malrag.corpus import build_document
from malrag.remote import ChatCompletionClient
from malrag.segmenter import segment_corpus, segment_paragraphs
from malrag.summarizer import (
    HttpExtractor,
    MockExtractor,
    SummarizationError,
    TaskKind,
    fill_placeholders,
    load_templates,
    summarize_document,
    summarize_section,
)


class RecordingExtractor(MockExtractor):
    def __init__(self, fail_on: str | None = None):
        super().__init__()
        self.calls = []
        self.fail_on = fail_on

    def extract(self, task, inputs):
        self.calls.append((task, list(inputs)))
        if self.fail_on and any(self.fail_on in t for t in inputs):
            raise RuntimeError("backend down")
        return super().extract(task, inputs)


def _section_chunks(paragraphs):
    doc = build_document("d", "", [("s", paragraphs)])
    return segment_paragraphs(doc)


def test_single_paragraph_section():
    chunks = _section_chunks(["First here. Second there."])
    assert summarize_section(chunks, MockExtractor()) == "First here."


def test_reduce_input_is_first_sentences_in_order():
    backend = RecordingExtractor()
    out = summarize_section(_section_chunks(["X. More x.", "Y. More y."]), backend)
    assert backend.calls[-1] == (TaskKind.SECTION_AGGREGATE, ["X.", "Y."])
    assert out == "X. Y."


def test_empty_section_rejected():
    with pytest.raises(ValueError):
        summarize_section([], MockExtractor())


def test_mixed_sections_rejected():
    doc = build_document("d", "", [("a", ["A."]), ("b", ["B."])])
    with pytest.raises(ValueError, match="different section"):
        summarize_section(segment_paragraphs(doc), MockExtractor())


def test_document_summary():
    assert summarize_document(["Only one."], MockExtractor()) == "Only one."
    a = summarize_document(["One.", "Two."], MockExtractor())
    b = summarize_document(["Two.", "One."], MockExtractor())
    assert a == "One. Two." and b == "Two. One."
    with pytest.raises(ValueError):
        summarize_document([], MockExtractor())


def test_mock_truncates_to_sixty_words():
    long = " ".join(["word"] * 100) + "."
    assert len(MockExtractor().extract(TaskKind.PARAGRAPH_SUMMARY, [long]).split()) == 60
    assert len(MockExtractor().extract(TaskKind.SECTION_AGGREGATE, [long, long]).split()) == 60


def test_backend_failure_carries_chunk_id():
    with pytest.raises(SummarizationError) as exc:
        summarize_section(_section_chunks(["Boom here."]), RecordingExtractor(fail_on="Boom"))
    assert exc.value.chunk_id == "d#S0.P0"


def _toy_docs():
    return [
        build_document("d1", "", [("a", ["A1. Ax.", "A2. Ax."]), ("b", ["B1. Bx."])]),
        build_document("d2", "", [("c", ["C1. Cx.", "Boom. Cx."])]),
    ]


def test_fill_counts_and_records():
    docs = _toy_docs()
    res = fill_placeholders(docs, segment_corpus(docs), MockExtractor())
    assert res.complete
    assert len(res.records) == 5
    filled = [c for c in res.chunks if c.is_summary]
    assert len(filled) == 5 and all(c.text and c.words for c in filled)
    by_id = {r.chunk_id: r for r in res.records}
    assert by_id["d1#S0"].input_chunk_ids == ("d1#S0.P0", "d1#S0.P1")
    assert by_id["d1#D"].input_chunk_ids == ("d1#S0", "d1#S1")
    assert by_id["d1#D"].prompt_kind is TaskKind.DOCUMENT_AGGREGATE
    chunks = {c.chunk_id: c for c in res.chunks}
    assert chunks["d1#S0"].text == "A1. A2."
    assert chunks["d1#D"].text == "A1. A2. B1."


def test_document_summary_built_from_section_summaries_only():
    docs = _toy_docs()[:1]
    backend = RecordingExtractor()
    fill_placeholders(docs, segment_corpus(docs), backend)
    doc_calls = [inputs for task, inputs in backend.calls if task is TaskKind.DOCUMENT_AGGREGATE]
    assert doc_calls == [["A1. A2.", "B1."]]


def test_failure_isolated_to_document():
    docs = _toy_docs()
    res = fill_placeholders(docs, segment_corpus(docs), RecordingExtractor(fail_on="Boom"))
    assert list(res.failed) == ["d2"]
    assert not res.complete
    chunks = {c.chunk_id: c for c in res.chunks}
    assert chunks["d1#D"].text and chunks["d1#S1"].text
    assert chunks["d2#D"].is_placeholder and chunks["d2#S0"].is_placeholder


def test_fill_resumes_and_skips_done_documents():
    docs = _toy_docs()
    first = fill_placeholders(docs, segment_corpus(docs), RecordingExtractor(fail_on="Boom"))
    backend = RecordingExtractor()
    second = fill_placeholders(docs, first.chunks, backend)
    assert second.complete
    assert [r.chunk_id for r in second.records] == ["d2#S0", "d2#D"]
    assert all("A1" not in " ".join(i) for _, i in backend.calls)


def test_deterministic_and_parallel_equal():
    docs = _toy_docs()
    a = fill_placeholders(docs, segment_corpus(docs), MockExtractor())
    b = fill_placeholders(docs, segment_corpus(docs), MockExtractor(), parallelism=4)
    assert [c.to_dict() for c in a.chunks] == [c.to_dict() for c in b.chunks]


def test_http_extractor_renders_template_and_sends_token(monkeypatch):
    monkeypatch.setenv("MALRAG_LLM_TOKEN", "secret")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": " Summary. "}}]})

    client = ChatCompletionClient(
        "http://llm.test/v1/chat/completions", "test-model", client=httpx.Client(transport=httpx.MockTransport(handler))
    )
    templates = {k: f"{k.value}: {{input}}" for k in TaskKind}
    ex = HttpExtractor(client, templates)
    assert ex.extract(TaskKind.SECTION_AGGREGATE, ["a", "b"]) == "Summary."
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["messages"][0]["content"] == "section_aggregate: a\n\nb"
    assert ex.backend_id == "http-chat:test-model"


def test_template_directory_override(tmp_path):
    (tmp_path / "paragraph_summary.txt").write_text("P {input}", encoding="utf-8")
    t = load_templates(tmp_path)
    assert t[TaskKind.PARAGRAPH_SUMMARY] == "P {input}"
    assert "{input}" in t[TaskKind.DOCUMENT_AGGREGATE]
    (tmp_path / "section_aggregate.txt").write_text("no placeholder", encoding="utf-8")
    with pytest.raises(ValueError, match="placeholder"):
        load_templates(tmp_path)
