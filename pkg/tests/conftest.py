import json
import os

import hypothesis
import pytest

from malrag.config import config_from_dict
from malrag.corpus import serialize_corpus
from malrag.store import build_store
from malrag.synthetic import toy_corpus

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

_acceptance: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[number] = (title, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report.acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, outcome = _acceptance[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] AC{n:02d} {title}")


TOY_TARGET = 40


def write_toy_store(tmp_path, docs=None, **overrides):
    docs = docs if docs is not None else toy_corpus()
    (tmp_path / "corpus.jsonl").write_bytes(serialize_corpus(docs))
    raw = {
        "corpus": "corpus.jsonl",
        "store": "store",
        "output": "out",
        "segmenter": {"multi_sentence_target_words": TOY_TARGET, "vanilla_chunk_words": TOY_TARGET},
        "parallelism": 2,
        "batch_size": 16,
    }
    raw.update(overrides)
    (tmp_path / "config.json").write_text(json.dumps(raw), encoding="utf-8")
    return tmp_path / "config.json", config_from_dict(raw, tmp_path)


@pytest.fixture
def toy_store(tmp_path):
    _, cfg = write_toy_store(tmp_path)
    return build_store(cfg)
