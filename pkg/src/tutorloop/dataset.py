"""Training-data compilation: QA and QAFR records from traces, ground-truth
filtering, supervised (input, target) pairs, curriculum shards, seed subsets."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .core import Question, QuestionCoord, RefinementTrace
from .evaluation import NoAnswerFound, extract_final_answer, normalize_answer, score
from . import jsonio, prompts

log = logging.getLogger(__name__)

PHASE_NAMES = ["basic", "intermediate", "advanced"]


class MissingGold(Exception):
    """A basic-stage record's seed has no ground-truth label."""


@dataclass(frozen=True)
class QARecord:
    question_id: str
    coord: QuestionCoord
    question: str
    answer: str
    qualified: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "level": self.coord.level,
            "variant": self.coord.variant,
            "question": self.question,
            "answer": self.answer,
            "qualified": self.qualified,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QARecord":
        return cls(
            question_id=d["question_id"],
            coord=QuestionCoord(d["level"], d["variant"]),
            question=d["question"],
            answer=d["answer"],
            qualified=d["qualified"],
        )


@dataclass(frozen=True)
class QAFRRecord:
    question_id: str
    iteration: int
    question: str
    answer: str
    feedback: str
    refined: str
    level: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "iteration": self.iteration,
            "question": self.question,
            "answer": self.answer,
            "feedback": self.feedback,
            "refined": self.refined,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QAFRRecord":
        return cls(
            question_id=d["question_id"],
            iteration=d["iteration"],
            question=d["question"],
            answer=d["answer"],
            feedback=d["feedback"],
            refined=d["refined"],
            level=d.get("level", 0),
        )


@dataclass(frozen=True)
class TrainingExample:
    kind: str  # qa | feedback | refine
    input: str
    target: str
    question_id: str
    level: int
    iteration: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "input": self.input,
            "target": self.target,
            "meta": {
                "question_id": self.question_id,
                "level": self.level,
                "iteration": self.iteration,
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainingExample":
        meta = d.get("meta", {})
        return cls(
            kind=d["kind"],
            input=d["input"],
            target=d["target"],
            question_id=meta["question_id"],
            level=meta["level"],
            iteration=meta.get("iteration"),
        )


@dataclass
class CurriculumShard:
    phase: str
    examples: list[TrainingExample]
    level_counts: dict[int, int]
    shortfall: int = 0


@dataclass
class CurriculumPlan:
    shards: list[CurriculumShard]

    def manifest(self) -> dict[str, Any]:
        return {
            "phases": [
                {
                    "phase": shard.phase,
                    "size": len(shard.examples),
                    "level_counts": {
                        str(level): count
                        for level, count in sorted(shard.level_counts.items())
                    },
                    "shortfall": shard.shortfall,
                }
                for shard in self.shards
            ]
        }


# --- record construction --------------------------------------------------

def build_qa(
    traces: Iterable[RefinementTrace], questions: Mapping[str, Question]
) -> list[QARecord]:
    """One record per trace: the question paired with its final answer.
    Unqualified traces are kept but flagged; dropping them is a downstream
    choice."""
    records = []
    for trace in sorted(traces, key=lambda t: t.question_id):
        q = questions[trace.question_id]
        records.append(
            QARecord(
                question_id=q.id,
                coord=q.coord,
                question=q.text,
                answer=trace.final_answer,
                qualified=trace.qualified,
            )
        )
    return records


def build_qafr(
    traces: Iterable[RefinementTrace], questions: Mapping[str, Question]
) -> list[QAFRRecord]:
    """One record per refined iteration: (question, answer, feedback,
    refined). Traces that qualified on first evaluation contribute nothing."""
    records = []
    for trace in sorted(traces, key=lambda t: t.question_id):
        q = questions[trace.question_id]
        for iteration in trace.iterations:
            if iteration.refined is None:
                continue
            records.append(
                QAFRRecord(
                    question_id=q.id,
                    iteration=iteration.index,
                    question=q.text,
                    answer=iteration.answer,
                    feedback=iteration.feedback.text,
                    refined=iteration.refined,
                    level=q.coord.level,
                )
            )
    return records


def gt_filter(
    qa: Sequence[QARecord], gold: Mapping[str, str]
) -> list[QARecord]:
    """Keep basic-stage records (coord (0, 0)) only when their extracted
    final answer matches the ground truth; everything else passes through."""
    kept = []
    for record in qa:
        if record.coord != QuestionCoord(0, 0):
            kept.append(record)
            continue
        seed_id = record.question_id.split("/")[0]
        if seed_id not in gold:
            raise MissingGold(f"no gold answer for seed {seed_id}")
        try:
            extracted = extract_final_answer(record.answer)
        except NoAnswerFound:
            continue
        if score(extracted, normalize_answer(gold[seed_id])):
            kept.append(record)
    return kept


def compile_training(
    qa: Sequence[QARecord], qafr: Sequence[QAFRRecord]
) -> list[TrainingExample]:
    """Materialize the three supervised conditioning structures: answer given
    question, feedback given (question, answer), and refined answer given
    (question, answer, feedback). Inputs reuse the generation-time prompt
    renderings so a trainer sees distributionally consistent text."""
    examples: list[TrainingExample] = []
    for record in qa:
        examples.append(
            TrainingExample(
                kind="qa",
                input=prompts.STUDENT_ANSWER.render(question=record.question),
                target=record.answer,
                question_id=record.question_id,
                level=record.coord.level,
            )
        )
    for record in qafr:
        examples.append(
            TrainingExample(
                kind="feedback",
                input=prompts.TEACHER_EVAL.render(
                    question=record.question, answer=record.answer
                ),
                target=record.feedback,
                question_id=record.question_id,
                level=record.level,
                iteration=record.iteration,
            )
        )
        examples.append(
            TrainingExample(
                kind="refine",
                input=prompts.STUDENT_REFINE.render(
                    question=record.question,
                    answer=record.answer,
                    feedback=record.feedback,
                ),
                target=record.refined,
                question_id=record.question_id,
                level=record.level,
                iteration=record.iteration,
            )
        )
    return examples


# --- curriculum scheduling ------------------------------------------------

def _phase_of_level(level: int, max_level: int, n_phases: int) -> int:
    if max_level == 0:
        return 0
    # contiguous, as even as possible
    return min(n_phases - 1, level * n_phases // (max_level + 1))


def curriculum_schedule(
    examples: Sequence[TrainingExample],
    n_phases: int = 3,
    ratio: Optional[float] = 0.8,
    rng_seed: int = 0,
) -> CurriculumPlan:
    """Order examples into easy-to-hard phase shards.

    Each phase's shard takes a deterministic quota of floor(ratio * size)
    examples from its own complexity group and splits the remainder as evenly
    as possible across the other groups, sampling without replacement. With
    ratio=None all examples go into a single globally shuffled shard
    (vanilla ordering).
    """
    rng = random.Random(rng_seed)
    if ratio is None:
        pool = list(examples)
        rng.shuffle(pool)
        counts: dict[int, int] = {}
        for ex in pool:
            counts[ex.level] = counts.get(ex.level, 0) + 1
        return CurriculumPlan(
            [CurriculumShard(phase="all", examples=pool, level_counts=counts)]
        )
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    if n_phases < 1:
        raise ValueError("n_phases must be >= 1")

    max_level = max((ex.level for ex in examples), default=0)
    pools: dict[int, list[TrainingExample]] = {k: [] for k in range(n_phases)}
    for ex in examples:
        pools[_phase_of_level(ex.level, max_level, n_phases)].append(ex)
    for pool in pools.values():
        rng.shuffle(pool)

    total = len(examples)
    base, remainder = divmod(total, n_phases)
    shard_sizes = [base + (1 if k < remainder else 0) for k in range(n_phases)]

    shards: list[CurriculumShard] = []
    for k in range(n_phases):
        size = shard_sizes[k]
        own_quota = int(ratio * size)
        shortfall = 0
        picked: list[TrainingExample] = []
        take_own = min(own_quota, len(pools[k]))
        shortfall += own_quota - take_own
        picked.extend(pools[k][:take_own])
        del pools[k][:take_own]

        rest = size - len(picked)
        others = [g for g in range(n_phases) if g != k and pools[g]]
        # round-robin keeps the cross-group split as even as possible
        while rest > 0 and others:
            for g in list(others):
                if rest == 0:
                    break
                if not pools[g]:
                    others.remove(g)
                    continue
                picked.append(pools[g].pop(0))
                rest -= 1
            others = [g for g in others if pools[g]]
        # backfill any shortfall from whatever remains, own group included
        while rest > 0:
            candidates = [g for g in range(n_phases) if pools[g]]
            if not candidates:
                break
            picked.append(pools[candidates[0]].pop(0))
            rest -= 1
        name = PHASE_NAMES[k] if n_phases <= len(PHASE_NAMES) else f"phase-{k}"
        if shortfall:
            log.warning(
                "insufficient data for phase %s: quota short by %d", name, shortfall
            )
        counts = {}
        for ex in picked:
            counts[ex.level] = counts.get(ex.level, 0) + 1
        shards.append(
            CurriculumShard(
                phase=name, examples=picked, level_counts=counts, shortfall=shortfall
            )
        )
    return CurriculumPlan(shards)


def subset_seeds(
    seeds: Sequence[Question], fraction: float, rng_seed: int = 0
) -> list[Question]:
    """Deterministic sample of ceil(fraction * n) seeds without replacement.

    Selection uses a fixed shuffled priority order, so subsets at growing
    fractions are nested; the returned list preserves the original order
    (fraction 1.0 is the identity).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(seeds)
    # tiny epsilon guards against float drift on exact fractions like 0.1 * 100
    k = min(n, math.ceil(fraction * n - 1e-9))
    order = list(range(n))
    random.Random(rng_seed).shuffle(order)
    chosen = set(order[:k])
    return [seed for i, seed in enumerate(seeds) if i in chosen]


# --- file emission --------------------------------------------------------

def write_qa(path: Path, records: Sequence[QARecord]) -> None:
    jsonio.write_jsonl(path, (r.to_dict() for r in records))


def write_qafr(path: Path, records: Sequence[QAFRRecord]) -> None:
    jsonio.write_jsonl(path, (r.to_dict() for r in records))


def write_training(path: Path, examples: Sequence[TrainingExample]) -> None:
    jsonio.write_jsonl(path, (e.to_dict() for e in examples))


def write_shards(directory: Path, plan: CurriculumPlan) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, shard in enumerate(plan.shards):
        jsonio.write_jsonl(
            directory / f"phase-{k}.jsonl", (e.to_dict() for e in shard.examples)
        )
    jsonio.atomic_write_text(
        directory / "manifest.json",
        jsonio.dump_jsonl([plan.manifest()]),
    )


def read_qa(path: Path) -> list[QARecord]:
    return [QARecord.from_dict(d) for d in jsonio.read_jsonl(path)]


def read_qafr(path: Path) -> list[QAFRRecord]:
    return [QAFRRecord.from_dict(d) for d in jsonio.read_jsonl(path)]


def read_training(path: Path) -> list[TrainingExample]:
    return [TrainingExample.from_dict(d) for d in jsonio.read_jsonl(path)]
