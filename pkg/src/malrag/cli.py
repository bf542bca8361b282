"""``malrag index|query|eval|stats``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import (
    PRESETS,
    ConfigError,
    PipelineConfig,
    load_config,
    make_chat,
    make_embedder,
    make_judge,
    make_template,
    preset,
    retriever_from_dict,
)
from .evaluation import load_qa_pairs
from .generation import TemplateError
from .pipeline import answer_question, format_stats, run_eval
from .retriever import RetrieverConfig
from .store import ChunkStore, StageError, build_store

logger = logging.getLogger("malrag")


def _add_retriever_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=PRESETS, help="named ablation configuration")
    p.add_argument("--levels", help="comma list of all|document|section|paragraph|multi|vanilla")
    tau = p.add_mutually_exclusive_group()
    tau.add_argument("--tau", type=float, help="cumulative probability threshold in (0, 1]")
    tau.add_argument("--no-tau", action="store_true", help="disable the threshold")
    p.add_argument("--budget", type=int, help="word budget C")
    p.add_argument("--packing", choices=("skip", "stop"))


def retriever_config(cfg: PipelineConfig, args: argparse.Namespace) -> tuple[RetrieverConfig, str]:
    rc = cfg.retriever
    label = "config"
    if args.preset:
        rc = preset(args.preset, rc.budget_words)
        label = args.preset
    changes: dict = {}
    if args.levels:
        parsed = retriever_from_dict({"levels": args.levels})
        changes["levels"], changes["vanilla"] = parsed.levels, parsed.vanilla
    if args.no_tau:
        changes["tau"] = None
    elif args.tau is not None:
        changes["tau"] = args.tau
    if args.budget is not None:
        changes["budget_words"] = args.budget
    if args.packing:
        changes["packing"] = args.packing
    if changes:
        rc = dataclasses.replace(rc, **changes)
        label = "custom" if label == "config" else f"{label}+custom"
    return rc, label


def cmd_index(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = build_store(cfg)
    sys.stdout.write(json.dumps(store.manifest["levels"], sort_keys=True) + "\n")
    return 0


def cmd_query(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = ChunkStore.open(cfg.store)
    rc, _ = retriever_config(cfg, args)
    outcome = answer_question(
        store, args.question, make_embedder(cfg.embedder), make_chat(cfg.chat), make_template(cfg.chat), rc
    )
    sys.stdout.write(outcome.answer.answer + "\n")
    audit = {"answer": outcome.answer.to_dict(), "retrieval": outcome.retrieval.to_dict()}
    if args.audit:
        sys.stdout.write(json.dumps(audit, sort_keys=True) + "\n")
    if args.audit_out:
        with open(args.audit_out, "a", encoding="utf-8") as f:
            f.write(json.dumps(audit, sort_keys=True) + "\n")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = ChunkStore.open(cfg.store)
    rc, label = retriever_config(cfg, args)
    if args.gold_context:
        label = "gold-context"
    try:
        pairs = load_qa_pairs(args.qa)
    except (OSError, ValueError) as exc:
        raise StageError("evaluate", str(exc)) from None
    if not pairs:
        logger.warning("Q/A file %s is empty; writing an empty report", args.qa)
    run = run_eval(
        store,
        pairs,
        make_embedder(cfg.embedder),
        make_chat(cfg.chat),
        make_template(cfg.chat),
        make_judge(cfg.judge),
        rc,
        gold_context=args.gold_context,
        parallelism=cfg.parallelism,
        label=label,
    )
    out = Path(args.out) if args.out else Path(cfg.output) / f"report-{label}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(run.report.dumps(), encoding="utf-8")
    if args.audit:
        audit_path = out.with_name(out.stem + ".audit.jsonl")
        audit_path.write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in run.audit_records()), encoding="utf-8"
        )
    agg = run.report.aggregate()
    sys.stdout.write(json.dumps(agg, sort_keys=True) + "\n")
    return 0


def cmd_stats(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = ChunkStore.open(cfg.store)
    sys.stdout.write(format_stats(store.manifest["levels"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malrag", description="Retrieval-augmented QA over document, section, paragraph and sentence-group chunks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and finalize a chunk store")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", help="override the corpus path")
    p.add_argument("--store", help="override the store directory")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="answer one question")
    p.add_argument("--config", required=True)
    p.add_argument("--store", help="override the store directory")
    p.add_argument("question")
    _add_retriever_flags(p)
    p.add_argument("--audit", action="store_true", help="print the retrieval audit record")
    p.add_argument("--audit-out", help="append the audit record to this file")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="answer and score a Q/A file")
    p.add_argument("--config", required=True)
    p.add_argument("--store", help="override the store directory")
    p.add_argument("--qa", required=True, help="newline-delimited Q/A records")
    _add_retriever_flags(p)
    p.add_argument("--gold-context", action="store_true", help="use the ground truth as the context")
    p.add_argument("--out", help="report path (default: <output>/report-<label>.jsonl)")
    p.add_argument("--audit", action="store_true", help="also write per-question audit records")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="per-level chunk statistics")
    p.add_argument("--config")
    p.add_argument("--store")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
        elif getattr(args, "store", None):
            cfg = PipelineConfig()
        else:
            parser.error("--config or --store is required")
        if getattr(args, "store", None):
            cfg.store = Path(args.store)
        if getattr(args, "corpus", None):
            cfg.corpus = Path(args.corpus)
        return args.func(args, cfg)
    except StageError as exc:
        print(f"malrag: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, TemplateError) as exc:
        print(f"malrag: config: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"malrag: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
