import json

import pytest

from malrag import config as config_mod
from malrag.cli import main
from malrag.config import ConfigError, config_from_dict, preset
from malrag.corpus import serialize_corpus
from malrag.index import HashingEmbedder
from malrag.pipeline import format_stats
from malrag.segmenter import ChunkLevel
from malrag.store import MANIFEST, SUMMARIES, VECTORS, ChunkStore, build_store
from malrag.summarizer import MockExtractor
from malrag.synthetic import toy_corpus

from conftest import write_toy_store


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_index_counts(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path)
    code, out, _ = _run(capsys, "index", "--config", cfg_path)
    assert code == 0
    levels = json.loads(out)
    assert levels["document"]["count"] == 3
    assert levels["section"]["count"] == 7
    assert levels["paragraph"]["count"] == 20
    assert levels["multi-sentence"]["count"] >= 20


def test_reindex_is_noop(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path)
    assert _run(capsys, "index", "--config", cfg_path)[0] == 0
    before = {p.name: p.stat().st_mtime_ns for p in (tmp_path / "store").iterdir()}
    assert _run(capsys, "index", "--config", cfg_path)[0] == 0
    after = {p.name: p.stat().st_mtime_ns for p in (tmp_path / "store").iterdir()}
    assert before == after


def test_changed_corpus_is_rejected(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path)
    _run(capsys, "index", "--config", cfg_path)
    (tmp_path / "corpus.jsonl").write_bytes(serialize_corpus(toy_corpus(seed=8)))
    code, _, err = _run(capsys, "index", "--config", cfg_path)
    assert code == 2 and "different corpus" in err


def test_missing_corpus_exit_code(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path, corpus="nope.jsonl")
    code, _, err = _run(capsys, "index", "--config", cfg_path)
    assert code == 2 and "not found" in err


def test_malformed_corpus_exit_code(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path)
    (tmp_path / "corpus.jsonl").write_text('{"doc_id": "x"}\n')
    assert _run(capsys, "index", "--config", cfg_path)[0] == 2


class PoisonExtractor(MockExtractor):
    """Fails on every input containing ``marker`` until disarmed."""

    marker = ""
    armed = True

    def extract(self, task, inputs):
        if PoisonExtractor.armed and any(PoisonExtractor.marker in t for t in inputs):
            raise RuntimeError("service unavailable")
        return super().extract(task, inputs)


def test_summarize_failure_then_resume(tmp_path, capsys, monkeypatch):
    docs = toy_corpus()
    PoisonExtractor.marker = docs[1].sections[0].paragraphs[0].text.split(".")[0]
    PoisonExtractor.armed = True
    monkeypatch.setitem(config_mod.EXTRACTORS, "mock", lambda o: PoisonExtractor())
    cfg_path, _ = write_toy_store(tmp_path, docs)
    code, _, err = _run(capsys, "index", "--config", cfg_path)
    assert code == 3 and "doc01" in err
    store = tmp_path / "store"
    assert not (store / MANIFEST).exists()
    persisted = [json.loads(l)["record"]["chunk_id"] for l in (store / SUMMARIES).read_text().splitlines()]
    assert persisted and not any(cid.startswith("doc01#") for cid in persisted)

    PoisonExtractor.armed = False
    assert _run(capsys, "index", "--config", cfg_path)[0] == 0
    recs = [json.loads(l)["record"]["chunk_id"] for l in (store / SUMMARIES).read_text().splitlines()]
    assert len(recs) == len(set(recs)) == 3 + 7
    assert set(persisted) <= set(recs)

    # identical to a build that never failed
    fresh = tmp_path / "fresh"
    fresh.mkdir()
    _, cfg2 = write_toy_store(fresh, docs)
    clean = build_store(cfg2)
    resumed = ChunkStore.open(store)
    assert {c.chunk_id: c.text for c in resumed.db.chunks} == {c.chunk_id: c.text for c in clean.db.chunks}


class FlakyEmbedder(HashingEmbedder):
    budget = 2

    def embed(self, texts):
        if FlakyEmbedder.budget <= 0:
            raise RuntimeError("quota exceeded")
        FlakyEmbedder.budget -= 1
        return super().embed(texts)


def test_embed_failure_then_resume(tmp_path, capsys, monkeypatch):
    FlakyEmbedder.budget = 2
    monkeypatch.setitem(config_mod.EMBEDDERS, "hash", lambda o: FlakyEmbedder())
    cfg_path, _ = write_toy_store(tmp_path)
    code, _, err = _run(capsys, "index", "--config", cfg_path)
    assert code == 4 and "resume" in err
    from malrag.index import read_vectors

    _, _, ids, _ = read_vectors(tmp_path / "store" / VECTORS)
    assert len(ids) == 32  # two batches of 16

    FlakyEmbedder.budget = 10_000
    assert _run(capsys, "index", "--config", cfg_path)[0] == 0
    _, _, ids2, mat = read_vectors(tmp_path / "store" / VECTORS)
    assert ids2[:32] == ids and len(ids2) == len(set(ids2))
    store = ChunkStore.open(tmp_path / "store")
    assert len(ids2) == len(store.db.chunks)


@pytest.fixture
def indexed(tmp_path, capsys):
    cfg_path, cfg = write_toy_store(tmp_path)
    assert _run(capsys, "index", "--config", cfg_path)[0] == 0
    return cfg_path, cfg


def test_query_with_audit(indexed, capsys):
    cfg_path, cfg = indexed
    q = toy_corpus()[0].sections[1].paragraphs[0].text
    code, out, _ = _run(capsys, "query", "--config", cfg_path, "--levels=all", "--tau=0.5", "--budget=10000", "--audit", q)
    assert code == 0
    answer, audit = out.splitlines()
    assert answer == q  # echo backend
    rec = json.loads(audit)
    r = rec["retrieval"]
    assert r["total_words"] <= 10_000
    assert r["selected"][0]["chunk_id"] == "doc00#S1.P0"
    assert rec["answer"]["chunk_ids"] == [s["chunk_id"] for s in r["selected"]]


def test_query_level_filter(indexed, capsys):
    cfg_path, _ = indexed
    code, out, _ = _run(capsys, "query", "--config", cfg_path, "--levels=paragraph", "--no-tau", "--audit", "anything")
    assert code == 0
    r = json.loads(out.splitlines()[1])["retrieval"]
    assert {s["level"] for s in r["selected"]} == {"paragraph"}
    assert len(r["selected"]) == 20
    assert r["config"]["tau"] is None


def test_whitespace_question_exit_code(indexed, capsys):
    cfg_path, _ = indexed
    code, _, err = _run(capsys, "query", "--config", cfg_path, "   ")
    assert code == 5 and "retrieve" in err


def test_query_unfinalized_store(tmp_path, capsys):
    cfg_path, _ = write_toy_store(tmp_path)
    code, _, err = _run(capsys, "query", "--config", cfg_path, "anything")
    assert code == 5 and "not finalized" in err


def _write_qa(path, pairs):
    path.write_text("".join(json.dumps(p) + "\n" for p in pairs))


def test_eval_gold_context(indexed, capsys, tmp_path):
    cfg_path, cfg = indexed
    qa = tmp_path / "qa.jsonl"
    _write_qa(qa, [{"question_id": "q1", "question": "Q one?", "ground_truth": "Alpha binds. Beta folds."}])
    cfg_path2, _ = write_toy_store(tmp_path, chat="echo-context")
    code, out, _ = _run(capsys, "eval", "--config", cfg_path2, "--qa", qa, "--gold-context")
    assert code == 0
    agg = json.loads(out)
    assert agg["mean_context_recall"] == 1.0 and agg["label"] == "gold-context"
    assert (tmp_path / "out" / "report-gold-context.jsonl").exists()


def test_eval_preset_and_audit(indexed, capsys, tmp_path):
    cfg_path, _ = indexed
    qa = tmp_path / "qa.jsonl"
    text = toy_corpus()[0].sections[0].paragraphs[0].text
    _write_qa(qa, [{"question_id": "q1", "question": text, "ground_truth": text}])
    out_path = tmp_path / "r.jsonl"
    code, out, _ = _run(capsys, "eval", "--config", cfg_path, "--qa", qa, "--preset", "mal-tau05", "--out", out_path, "--audit")
    assert code == 0
    lines = [json.loads(l) for l in out_path.read_text().splitlines()]
    assert lines[0]["f1"] == 1.0 and lines[-1]["label"] == "mal-tau05"
    audit = [json.loads(l) for l in (tmp_path / "r.audit.jsonl").read_text().splitlines()]
    assert audit[0]["question_id"] == "q1" and audit[0]["retrieval"]["selected"]


def test_eval_empty_qa(indexed, capsys, tmp_path):
    cfg_path, _ = indexed
    qa = tmp_path / "qa.jsonl"
    qa.write_text("")
    code, out, _ = _run(capsys, "eval", "--config", cfg_path, "--qa", qa)
    assert code == 0 and json.loads(out)["questions"] == 0


def test_eval_bad_qa_exit_code(indexed, capsys, tmp_path):
    cfg_path, _ = indexed
    qa = tmp_path / "qa.jsonl"
    qa.write_text("{not json\n")
    assert _run(capsys, "eval", "--config", cfg_path, "--qa", qa)[0] == 7


def test_stats_table(indexed, capsys):
    cfg_path, cfg = indexed
    code, out, _ = _run(capsys, "stats", "--config", cfg_path)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split("  ")[0] == "Chunks Level"
    assert [l.split()[0] for l in lines[1:]] == ["Document", "Section", "Paragraph", "Multi-sentence"]
    store = ChunkStore.open(cfg.store)
    for line, lvl in zip(lines[1:], ("document", "section", "paragraph", "multi-sentence")):
        n, avg = map(int, line.split()[-2:])
        chunks = [c for c in store.db.chunks if c.level.value == lvl and not c.vanilla]
        assert n == len(chunks)
        total = sum(c.words for c in chunks)
        assert avg == int(total / n + 0.5)


def test_stats_rejects_missing_level():
    levels = {lv: {"count": 1, "avg_words": 5} for lv in ("document", "section", "paragraph")}
    levels["multi-sentence"] = {"count": 0, "avg_words": 0}
    with pytest.raises(ValueError, match="invariant"):
        format_stats(levels)


def test_config_validation(tmp_path, capsys):
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"chat": {"kind": "nope"}})
    with pytest.raises(ConfigError):
        config_from_dict({"retriever": {"tau": 2}})
    with pytest.raises(ConfigError):
        preset("mal-tau09")
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text("{oops")
    assert _run(capsys, "stats", "--config", cfg_path)[0] == 1


def test_presets_cover_grid():
    assert len(config_mod.PRESETS) == 12
    assert preset("mal-tau05").levels == frozenset(ChunkLevel)
    assert preset("vanilla-notau").vanilla and preset("vanilla-notau").tau is None
    assert preset("section-tau05", 500).budget_words == 500


def test_build_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    _, ca = write_toy_store(a, parallelism=1)
    _, cb = write_toy_store(b, parallelism=4)
    build_store(ca), build_store(cb)
    for name in ("chunks.jsonl", "summaries.jsonl", "vectors.malv", "manifest.json"):
        assert (a / "store" / name).read_bytes() == (b / "store" / name).read_bytes(), name


def test_eval_planted_self_retrieval(indexed, capsys, tmp_path):
    from malrag.synthetic import planted_self_queries

    cfg_path, cfg = indexed
    store = ChunkStore.open(cfg.store)
    planted = planted_self_queries(store.db.chunks, per_level=3, seed=1)
    qa, script = tmp_path / "qa.jsonl", tmp_path / "script.jsonl"
    pairs = [{"question_id": f"p{i}", "question": t, "ground_truth": t} for i, (t, _) in enumerate(planted)]
    _write_qa(qa, pairs)
    _write_qa(script, [{"question": t, "answer": t, "requires_any": [c.chunk_id]} for t, c in planted])
    cfg_path2, _ = write_toy_store(tmp_path, chat={"kind": "scripted", "script": "script.jsonl"})
    code, out, _ = _run(capsys, "eval", "--config", cfg_path2, "--qa", qa, "--preset=mal-tau05")
    assert code == 0
    lines = [json.loads(l) for l in (tmp_path / "out" / "report-mal-tau05.jsonl").read_text().splitlines()]
    assert [l["f1"] for l in lines[:-1]] == [1.0] * len(planted)
