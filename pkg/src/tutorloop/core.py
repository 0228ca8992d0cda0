"""Shared domain types: questions, feedback, refinement traces, run configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


@dataclass(frozen=True)
class QuestionCoord:
    """Position of a question in the (complexity, generality) matrix.

    Level 0 is the basic stage; variant 0 is the canonical hard-chain
    question, variants 1..m are its generalized siblings.
    """

    level: int
    variant: int

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        if self.variant < 0:
            raise ValueError(f"variant must be >= 0, got {self.variant}")


def derive_question_id(seed_id: str, coord: QuestionCoord) -> str:
    """Deterministic id scheme: lineage is reconstructible from the id alone.

    Seed ids must not contain '/', which is the coordinate separator."""
    if "/" in seed_id:
        raise ValueError(f"seed id must not contain '/': {seed_id!r}")
    return f"{seed_id}/L{coord.level}/V{coord.variant}"


@dataclass(frozen=True)
class Question:
    id: str
    seed_id: str
    coord: QuestionCoord
    text: str
    parent_id: Optional[str] = None
    gold_answer: Optional[str] = None


class Verdict(str, Enum):
    QUALIFIED = "qualified"
    UNQUALIFIED = "unqualified"


@dataclass(frozen=True)
class Feedback:
    """Parsed teacher evaluation. The verdict is always set; the score may not
    be recoverable from free-form critique text."""

    verdict: Verdict
    text: str
    score: Optional[int] = None


@dataclass(frozen=True)
class RefinementIteration:
    index: int
    answer: str
    feedback: Feedback
    refined: Optional[str] = None


@dataclass(frozen=True)
class RefinementTrace:
    question_id: str
    iterations: tuple[RefinementIteration, ...]
    final_answer: str
    qualified: bool

    @classmethod
    def from_iterations(
        cls, question_id: str, iterations: list[RefinementIteration]
    ) -> "RefinementTrace":
        if not iterations:
            raise ValueError("a trace requires at least one iteration")
        last = iterations[-1]
        final = last.refined if last.refined is not None else last.answer
        return cls(
            question_id=question_id,
            iterations=tuple(iterations),
            final_answer=final,
            qualified=last.feedback.verdict is Verdict.QUALIFIED,
        )


@dataclass
class RunConfig:
    """Parameters of one progressive-learning run.

    Defaults (3 levels, 2 generalized variants, 3 refinement iterations)
    match the reference configuration.
    """

    n_levels: int = 3
    m_generalized: int = 2
    max_refine_iters: int = 3
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "scripted"})
    concurrency: int = 1
    rng_seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.m_generalized < 0:
            raise ValueError("m_generalized must be >= 0")
        if self.max_refine_iters < 1:
            raise ValueError("max_refine_iters must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def protocol_hash(self) -> str:
        """Hash of everything that influences generated content.

        Execution knobs (concurrency, output_dir) are excluded: they must not
        change outputs, so a resume may alter them freely.
        """
        payload = {
            "n_levels": self.n_levels,
            "m_generalized": self.m_generalized,
            "max_refine_iters": self.max_refine_iters,
            "backend": self.backend,
            "rng_seed": self.rng_seed,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class LineageReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_lineage(questions: dict[str, Question]) -> LineageReport:
    """Check that every question obeys the matrix lineage rules and that all
    parent references resolve within the given set."""
    report = LineageReport()
    for q in questions.values():
        expected_id = derive_question_id(q.seed_id, q.coord)
        if q.id != expected_id:
            report.violations.append(
                f"{q.id}: id does not match coord (expected {expected_id})"
            )
        if q.coord == QuestionCoord(0, 0):
            if q.parent_id is not None:
                report.violations.append(f"{q.id}: seed question must have no parent")
            continue
        if q.parent_id is None:
            report.violations.append(f"{q.id}: non-seed question must have a parent")
            continue
        parent = questions.get(q.parent_id)
        if parent is None:
            report.violations.append(f"{q.id}: parent {q.parent_id} not in set")
            continue
        if q.coord.variant >= 1:
            if parent.coord != QuestionCoord(q.coord.level, 0):
                report.violations.append(
                    f"{q.id}: generalized variant must attach to "
                    f"({q.coord.level},0), parent is {parent.coord}"
                )
        else:
            if parent.coord != QuestionCoord(q.coord.level - 1, 0):
                report.violations.append(
                    f"{q.id}: hardened question must attach to "
                    f"({q.coord.level - 1},0), parent is {parent.coord}"
                )
        if parent.seed_id != q.seed_id:
            report.violations.append(
                f"{q.id}: parent {parent.id} belongs to a different seed"
            )
    return report
