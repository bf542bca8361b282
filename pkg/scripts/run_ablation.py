#!/usr/bin/env python3
"""Evaluate every preset (six level families x two tau settings) on one
store and Q/A file, then print a mean-F1 table.

    python3 scripts/run_ablation.py --config demo/config.json --qa demo/qa.jsonl
"""

import argparse
import json

from malrag.config import PRESET_FAMILIES, PRESET_TAUS, load_config, make_chat, make_embedder, make_judge, make_template, preset
from malrag.evaluation import load_qa_pairs
from malrag.pipeline import run_eval
from malrag.store import ChunkStore


def main() -> None:
    ap = argparse.ArgumentParser(description="preset grid evaluation")
    ap.add_argument("--config", required=True)
    ap.add_argument("--qa", required=True)
    ap.add_argument("--budget", type=int, help="override the word budget")
    ap.add_argument("--json", action="store_true", help="print aggregates as JSON lines instead")
    args = ap.parse_args()

    cfg = load_config(args.config)
    store = ChunkStore.open(cfg.store)
    pairs = load_qa_pairs(args.qa)
    budget = args.budget or cfg.retriever.budget_words
    emb, chat, judge, template = make_embedder(cfg.embedder), make_chat(cfg.chat), make_judge(cfg.judge), make_template(cfg.chat)

    table: dict[str, dict[str, float]] = {}
    for fam in PRESET_FAMILIES:
        for tau in PRESET_TAUS:
            name = f"{fam}-{tau}"
            run = run_eval(store, pairs, emb, chat, template, judge, preset(name, budget), parallelism=cfg.parallelism, label=name)
            agg = run.report.aggregate()
            if args.json:
                print(json.dumps(agg, sort_keys=True))
            table.setdefault(fam, {})[tau] = agg["mean_f1"]
    if not args.json:
        print(f"{'family':<10} {'tau=0.5':>8} {'no tau':>8}")
        for fam, row in table.items():
            print(f"{fam:<10} {row['tau05']:>8.3f} {row['notau']:>8.3f}")


if __name__ == "__main__":
    main()
