import math
import random

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from malrag.index import ChunkDatabase, HashingEmbedder, embed_all
from malrag.retriever import (
    RetrieverConfig,
    apply_threshold,
    rank_candidates,
    retrieve,
    retrieve_scored,
    select_by_budget,
    softmax_probabilities,
)
from malrag.segmenter import Chunk, ChunkLevel, Provenance, segment_corpus
from malrag.summarizer import MockExtractor, fill_placeholders
from malrag.synthetic import toy_corpus


def _chunk(i, words, level=ChunkLevel.PARAGRAPH):
    text = " ".join(f"w{i}x{j}" for j in range(words))
    return Chunk(f"c{i}", level, text, words, Provenance("d", 0, (i, i)), False)


def _db(word_counts):
    return ChunkDatabase([_chunk(i, w) for i, w in enumerate(word_counts)])


# -- budget ------------------------------------------------------------------


def test_budget_skip_example():
    db = _db([400, 300, 500])
    scored = [("c0", 0.9), ("c1", 0.8), ("c2", 0.7)]
    assert [c.chunk_id for c in select_by_budget(scored, db, 800)] == ["c0", "c1"]


def test_budget_skip_continues_past_oversize():
    db = _db([400, 500, 300])
    scored = [("c0", 0.9), ("c1", 0.8), ("c2", 0.7)]
    assert [c.chunk_id for c in select_by_budget(scored, db, 800)] == ["c0", "c2"]
    assert [c.chunk_id for c in select_by_budget(scored, db, 800, packing="stop")] == ["c0"]


def test_slack_budget_takes_all():
    db = _db([5, 6, 7])
    scored = [("c0", 0.3), ("c1", 0.2), ("c2", 0.1)]
    assert len(select_by_budget(scored, db, 18)) == 3


def test_everything_too_large_warns(caplog):
    db = _db([50, 60])
    res = retrieve_scored("q", [("c0", 0.5), ("c1", 0.4)], db, RetrieverConfig(budget_words=10))
    assert res.selected == [] and res.warnings
    assert "budget" in caplog.text


# -- softmax -------------------------------------------------------------------


def test_softmax_examples():
    assert softmax_probabilities([0.9, 0.9]) == [0.5, 0.5]
    assert softmax_probabilities([0.3]) == [1.0]
    p = softmax_probabilities([1.0, 0.0])
    # e/(e+1) and 1/(e+1), 40-digit evaluation
    assert p[0] == pytest.approx(0.7310585786300048792511592418, abs=1e-12)
    assert p[1] == pytest.approx(0.2689414213699951207488407582, abs=1e-12)
    with pytest.raises(ValueError):
        softmax_probabilities([])


def _mp_softmax(sims):
    with mpmath.workdps(50):
        exps = [mpmath.exp(mpmath.mpf(s)) for s in sims]
        z = mpmath.fsum(exps)
        return [float(e / z) for e in exps]


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.floats(-50, 50))
def test_softmax_oracle_and_shift(sims, shift):
    p = softmax_probabilities(sims)
    assert math.fsum(p) == pytest.approx(1.0, abs=1e-9)
    for a, b in zip(p, _mp_softmax(sims)):
        assert a == pytest.approx(b, abs=1e-9)
    for a, b in zip(p, softmax_probabilities([s + shift for s in sims])):
        assert a == pytest.approx(b, abs=1e-9)


# -- threshold -----------------------------------------------------------------


def test_threshold_examples():
    assert apply_threshold([0.4, 0.3, 0.2, 0.1], 0.5) == (1, False)
    assert apply_threshold([0.6, 0.4], 0.5) == (1, True)
    assert apply_threshold([0.4, 0.3, 0.2, 0.1], None) == (4, False)
    assert apply_threshold([0.25, 0.25, 0.5], 0.5) == (2, False)
    assert apply_threshold([0.5, 0.5], 1.0) == (2, False)


@given(
    st.lists(st.floats(0.01, 1), min_size=1, max_size=30),
    st.floats(0.01, 1),
    st.floats(0.01, 1),
)
def test_threshold_monotone(weights, t1, t2):
    z = sum(weights)
    probs = sorted((w / z for w in weights), reverse=True)
    lo, hi = sorted((t1, t2))
    n_lo, _ = apply_threshold(probs, lo)
    n_hi, _ = apply_threshold(probs, hi)
    assert 1 <= n_lo <= n_hi <= len(probs)
    n_none, _ = apply_threshold(probs, None)
    assert n_hi <= n_none


def test_rank_candidates_keeps_order_and_running_sum():
    db = _db([1, 1, 1])
    cands = select_by_budget([("c0", 0.9), ("c1", 0.5), ("c2", 0.5)], db, 10)
    ranked = rank_candidates(cands)
    assert [r.chunk_id for r in ranked] == ["c0", "c1", "c2"]
    running = 0.0
    for r in ranked:
        running += r.probability
        assert r.cumulative_probability == pytest.approx(running)


def test_config_validation():
    with pytest.raises(ValueError):
        RetrieverConfig(budget_words=0)
    with pytest.raises(ValueError):
        RetrieverConfig(tau=0.0)
    with pytest.raises(ValueError):
        RetrieverConfig(tau=1.5)
    with pytest.raises(ValueError):
        RetrieverConfig(levels=frozenset())
    assert RetrieverConfig().budget_words == 10_000 and RetrieverConfig().tau == 0.5


# -- end to end on the toy corpus -----------------------------------------------


@pytest.fixture(scope="module")
def toy_db():
    docs = toy_corpus()
    chunks = fill_placeholders(docs, segment_corpus(docs), MockExtractor()).chunks
    db = ChunkDatabase(chunks)
    embed_all(db, HashingEmbedder())
    return db.finalize()


def test_self_retrieval(toy_db):
    target = next(c for c in toy_db.chunks if c.level is ChunkLevel.SECTION)
    res = retrieve(target.text, toy_db, HashingEmbedder(), RetrieverConfig(tau=None))
    assert res.selected[0].chunk_id == target.chunk_id
    assert res.selected[0].probability == max(s.probability for s in res.selected)


def test_level_filter(toy_db):
    cfg = RetrieverConfig(tau=None, levels=frozenset({ChunkLevel.DOCUMENT}))
    res = retrieve("anything here", toy_db, HashingEmbedder(), cfg)
    assert res.k_budget_selected == 3
    assert {s.level for s in res.selected} == {ChunkLevel.DOCUMENT}


def test_tau_prefix_of_no_tau(toy_db):
    rng = random.Random(5)
    words = " ".join(c.text for c in toy_db.chunks).split()
    for _ in range(50):
        q = " ".join(rng.sample(words, 8))
        a = retrieve(q, toy_db, HashingEmbedder(), RetrieverConfig(tau=0.5))
        b = retrieve(q, toy_db, HashingEmbedder(), RetrieverConfig(tau=None))
        assert a.chunk_ids == b.chunk_ids[: len(a.chunk_ids)]
        assert math.fsum(s.probability for s in b.budget_selected) == pytest.approx(1.0, abs=1e-9)
        assert a.total_words <= 10_000


def test_audit_record_fields(toy_db):
    res = retrieve("some query words", toy_db, HashingEmbedder(), RetrieverConfig(budget_words=100))
    d = res.to_dict()
    assert set(d) >= {"selected", "total_words", "k_budget_selected", "config", "budget_selected"}
    assert d["total_words"] <= 100
    assert d["config"]["levels"] == ["document", "section", "paragraph", "multi-sentence"]
    for row in d["selected"]:
        assert set(row) == {"chunk_id", "level", "similarity", "probability", "cumulative_probability", "words"}
