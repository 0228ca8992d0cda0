"""Command-line entry point for the pipeline."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional

import yaml

from . import dataset, engine, evaluation, jsonio
from .backends import generate_arithmetic_corpus
from .core import Question, QuestionCoord, RunConfig, derive_question_id
from .evaluation import CorpusItem

_ALLOWED_KEYS: dict[str, Any] = {
    "corpus": None,
    "corpus_format": None,
    "builtin_count": None,
    "n_levels": None,
    "m_generalized": None,
    "max_refine_iters": None,
    "concurrency": None,
    "rng_seed": None,
    "output_dir": None,
    "backend": {
        "kind",
        "error_rate",
        "stubborn",
        "base_url",
        "model",
        "api_key_env",
        "gen_temperature",
        "eval_temperature",
        "timeout",
        "max_attempts",
    },
    "dataset": {"drop_unqualified", "gt_filter"},
    "curriculum": {"ratio", "n_phases", "vanilla"},
}


class CliError(Exception):
    pass


def load_config(path: Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise CliError(f"config file {path} must contain a mapping")
    for key, value in raw.items():
        if key not in _ALLOWED_KEYS:
            raise CliError(f"unknown config key: {key!r}")
        allowed = _ALLOWED_KEYS[key]
        if isinstance(allowed, set):
            if not isinstance(value, dict):
                raise CliError(f"config key {key!r} must be a mapping")
            for sub in value:
                if sub not in allowed:
                    raise CliError(f"unknown config key: {key}.{sub}")
    return raw


def _corpus_to_seeds(items: list[CorpusItem]) -> list[Question]:
    seeds = []
    for item in items:
        seed_id = item.id.replace("/", "_")
        coord = QuestionCoord(0, 0)
        seeds.append(
            Question(
                id=derive_question_id(seed_id, coord),
                seed_id=seed_id,
                coord=coord,
                text=item.question,
                gold_answer=item.gold,
            )
        )
    return seeds


def _load_seeds(cfg: dict[str, Any]) -> list[Question]:
    corpus = cfg.get("corpus")
    if corpus == "builtin:arithmetic":
        return generate_arithmetic_corpus(
            int(cfg.get("builtin_count", 50)), int(cfg.get("rng_seed", 0))
        )
    if not corpus:
        raise CliError("config must set 'corpus'")
    fmt = cfg.get("corpus_format", "plain")
    items = evaluation.load_corpus(Path(corpus), fmt)
    return _corpus_to_seeds(items)


def _run_config(cfg: dict[str, Any], args: argparse.Namespace) -> RunConfig:
    backend = dict(cfg.get("backend", {"kind": "scripted"}))
    rng_seed = args.seed if args.seed is not None else int(cfg.get("rng_seed", 0))
    output_dir = args.out or cfg.get("output_dir")
    if not output_dir:
        raise CliError("no output directory: set output_dir in config or pass --out")
    return RunConfig(
        n_levels=int(cfg.get("n_levels", 3)),
        m_generalized=int(cfg.get("m_generalized", 2)),
        max_refine_iters=int(cfg.get("max_refine_iters", 3)),
        backend=backend,
        concurrency=int(cfg.get("concurrency", 1)),
        rng_seed=rng_seed,
        output_dir=str(output_dir),
    )


# --- subcommands ----------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    if not args.config:
        raise CliError("run requires --config")
    cfg = load_config(Path(args.config))
    config = _run_config(cfg, args)
    backend_cfg = config.backend
    if backend_cfg.get("kind") == "remote":
        env = backend_cfg.get("api_key_env", "TUTORLOOP_API_KEY")
        if not os.environ.get(env):
            raise CliError(f"remote backend requires environment variable {env}")

    seeds = _load_seeds(cfg)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonio.atomic_write_text(
        out_dir / "config.json",
        json.dumps(
            {**cfg, "rng_seed": config.rng_seed, "output_dir": config.output_dir},
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )

    questions, traces = engine.run_progressive(
        seeds, config, checkpoint_dir=out_dir
    )

    qa = dataset.build_qa(traces.values(), questions)
    qafr = dataset.build_qafr(traces.values(), questions)
    ds_cfg = cfg.get("dataset", {})
    if ds_cfg.get("gt_filter"):
        gold = {s.seed_id: s.gold_answer for s in seeds if s.gold_answer}
        qa = dataset.gt_filter(qa, gold)
    if ds_cfg.get("drop_unqualified"):
        qa = [r for r in qa if r.qualified]
    dataset.write_qa(out_dir / "d_qa.jsonl", qa)
    dataset.write_qafr(out_dir / "d_qafr.jsonl", qafr)

    qualified = sum(1 for t in traces.values() if t.qualified)
    print(f"run directory: {out_dir}")
    print(f"questions: {len(questions)}")
    print(f"traces: {len(traces)}")
    print(f"qualified rate: {qualified / len(traces):.3f}" if traces else "no traces")
    print(f"d_qa records: {len(qa)}")
    print(f"d_qafr records: {len(qafr)}")
    return 0


def cmd_compile(args: argparse.Namespace) -> int:
    qa = dataset.read_qa(Path(args.qa))
    qafr = dataset.read_qafr(Path(args.qafr)) if args.qafr else []
    examples = dataset.compile_training(qa, qafr)
    out = Path(args.out or "train.jsonl")
    dataset.write_training(out, examples)
    print(f"wrote {len(examples)} training examples to {out}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    qa = dataset.read_qa(Path(args.qa))
    items = evaluation.load_corpus(Path(args.corpus), args.format)
    gold = {
        item.id.replace("/", "_"): item.gold for item in items if item.gold is not None
    }
    kept = dataset.gt_filter(qa, gold)
    out = Path(args.out or "d_qa.filtered.jsonl")
    dataset.write_qa(out, kept)
    print(f"kept {len(kept)} of {len(qa)} records -> {out}")
    return 0


def cmd_schedule(args: argparse.Namespace) -> int:
    examples = dataset.read_training(Path(args.train))
    ratio = None if args.vanilla else args.ratio
    plan = dataset.curriculum_schedule(
        examples,
        n_phases=args.phases,
        ratio=ratio,
        rng_seed=args.seed if args.seed is not None else 0,
    )
    out = Path(args.out or "shards")
    dataset.write_shards(out, plan)
    print(json.dumps(plan.manifest(), indent=2))
    print(f"wrote {len(plan.shards)} shard(s) to {out}")
    return 0


def cmd_subset(args: argparse.Namespace) -> int:
    items = evaluation.load_corpus(Path(args.corpus), args.format)
    seeds = _corpus_to_seeds(items)
    subset = dataset.subset_seeds(
        seeds, args.fraction, rng_seed=args.seed if args.seed is not None else 0
    )
    out = Path(args.out or "subset.tsv")
    lines = []
    for seed in subset:
        gold = seed.gold_answer or ""
        lines.append(f"{seed.text}\t{gold}" if gold else seed.text)
    jsonio.atomic_write_text(out, "\n".join(lines) + "\n" if lines else "")
    print(f"wrote {len(subset)} of {len(seeds)} seeds to {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    items = evaluation.load_corpus(Path(args.corpus), args.format)
    completions = {
        str(row["id"]): row["completion"]
        for row in jsonio.read_jsonl(Path(args.completions))
    }
    levels = None
    if args.questions:
        levels = {}
        for row in jsonio.read_jsonl(Path(args.questions)):
            levels[row["id"]] = row["level"]
    report = evaluation.evaluate_completions(completions, items, levels)
    print(evaluation.format_report(report))
    if args.out:
        jsonio.atomic_write_text(
            Path(args.out), json.dumps(report.to_dict(), indent=2) + "\n"
        )
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    questions = {
        d["id"]: d for d in jsonio.read_jsonl(run_dir / engine.QUESTIONS_FILE)
    }
    traces = {
        d["question_id"]: d for d in jsonio.read_jsonl(run_dir / engine.TRACES_FILE)
    }
    if args.id not in questions:
        raise CliError(f"question not found: {args.id}")
    chain = []
    cursor: Optional[str] = args.id
    while cursor is not None:
        chain.append(questions[cursor])
        cursor = questions[cursor].get("parent_id")
    print("lineage (self -> seed):")
    for q in chain:
        print(f"  [{q['level']},{q['variant']}] {q['id']}: {q['text']}")
    trace = traces.get(args.id)
    if trace is None:
        print("no trace recorded")
        return 0
    print(f"trace (qualified={trace['qualified']}):")
    for it in trace["iterations"]:
        fb = it["feedback"]
        print(f"  iteration {it['index']}:")
        print(f"    answer:   {it['answer']}")
        print(f"    feedback: [{fb['verdict']}, score={fb['score']}] {fb['text']}")
        if it.get("refined") is not None:
            print(f"    refined:  {it['refined']}")
    print(f"final answer: {trace['final_answer']}")
    return 0


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the run config file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int, default=None, help="rng seed override")

    parser = argparse.ArgumentParser(
        prog="tutorloop",
        description="teacher-student progressive learning pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="execute a progressive run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser(
        "compile", parents=[common], help="compile training examples from datasets"
    )
    p.add_argument("--qa", required=True, help="d_qa.jsonl path")
    p.add_argument("--qafr", help="d_qafr.jsonl path")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser(
        "filter", parents=[common], help="apply the ground-truth filter to d_qa"
    )
    p.add_argument("--qa", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", default="plain", choices=["plain", "gsm8k", "math"])
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser(
        "schedule", parents=[common], help="produce curriculum-ordered shards"
    )
    p.add_argument("--train", required=True, help="train.jsonl path")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--phases", type=int, default=3)
    p.add_argument("--vanilla", action="store_true", help="single shuffled shard")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("subset", parents=[common], help="sample a seed subset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", default="plain", choices=["plain", "gsm8k", "math"])
    p.add_argument("--fraction", type=float, required=True)
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("eval", parents=[common], help="score a completions file")
    p.add_argument("--completions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", default="plain", choices=["plain", "gsm8k", "math"])
    p.add_argument("--questions", help="questions.jsonl for per-level breakdown")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="show lineage and trace")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--id", required=True, help="question id")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CliError,
        engine.ConfigMismatch,
        engine.CorruptCheckpoint,
        engine.RunFailure,
        evaluation.FormatError,
        evaluation.KeyMismatch,
        dataset.MissingGold,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
