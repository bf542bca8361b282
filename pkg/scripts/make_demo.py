#!/usr/bin/env python3
"""Write a self-contained offline demo workspace.

The directory gets a synthetic corpus, a mock-backend config, a built store
and a mixed-granularity Q/A set with a matching chat script, so every CLI
subcommand can be run against it::

    python3 scripts/make_demo.py demo
    malrag stats --config demo/config.json
    malrag eval --config demo/config.json --qa demo/qa.jsonl --preset mal-tau05
"""

import argparse
import json
from pathlib import Path

from malrag.config import load_config
from malrag.corpus import serialize_corpus
from malrag.store import build_store
from malrag.synthetic import mixed_granularity_questions, structured_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--docs", type=int, default=6)
    ap.add_argument("--sections", type=int, default=3)
    ap.add_argument("--paragraphs", type=int, default=3)
    ap.add_argument("--target", type=int, default=40, help="multi-sentence target words")
    ap.add_argument("--questions", type=int, default=6, help="questions of each kind")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    layout = [[args.paragraphs] * args.sections] * args.docs
    (out / "corpus.jsonl").write_bytes(serialize_corpus(structured_corpus(layout, args.seed)))
    config = {
        "corpus": "corpus.jsonl",
        "store": "store",
        "output": "out",
        "segmenter": {"multi_sentence_target_words": args.target, "vanilla_chunk_words": args.target},
        "chat": {"kind": "scripted", "script": "script.jsonl"},
        "retriever": {"levels": "all", "tau": 0.5, "budget_words": 10000},
    }
    (out / "script.jsonl").touch()
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")

    store = build_store(load_config(out / "config.json"))
    planted = mixed_granularity_questions(store.db.chunks, args.questions, args.seed)
    (out / "qa.jsonl").write_text("".join(json.dumps(p.to_dict()) + "\n" for p in planted.pairs))
    (out / "script.jsonl").write_text("".join(json.dumps(r) + "\n" for r in planted.script_records()))
    print(f"wrote {out}: {len(planted.pairs)} questions, store levels {store.manifest['levels']}")


if __name__ == "__main__":
    main()
