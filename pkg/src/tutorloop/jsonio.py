"""JSON-lines (de)serialization for questions and traces, plus atomic file
writes used by checkpoints and dataset emission."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable

from .core import (
    Feedback,
    Question,
    QuestionCoord,
    RefinementIteration,
    RefinementTrace,
    Verdict,
)


def question_to_dict(q: Question) -> dict[str, Any]:
    return {
        "id": q.id,
        "seed_id": q.seed_id,
        "parent_id": q.parent_id,
        "level": q.coord.level,
        "variant": q.coord.variant,
        "text": q.text,
        "gold_answer": q.gold_answer,
    }


def question_from_dict(d: dict[str, Any]) -> Question:
    return Question(
        id=d["id"],
        seed_id=d["seed_id"],
        parent_id=d.get("parent_id"),
        coord=QuestionCoord(d["level"], d["variant"]),
        text=d["text"],
        gold_answer=d.get("gold_answer"),
    )


def feedback_to_dict(f: Feedback) -> dict[str, Any]:
    return {"verdict": f.verdict.value, "score": f.score, "text": f.text}


def feedback_from_dict(d: dict[str, Any]) -> Feedback:
    return Feedback(verdict=Verdict(d["verdict"]), score=d.get("score"), text=d["text"])


def trace_to_dict(t: RefinementTrace) -> dict[str, Any]:
    return {
        "question_id": t.question_id,
        "iterations": [
            {
                "index": it.index,
                "answer": it.answer,
                "feedback": feedback_to_dict(it.feedback),
                "refined": it.refined,
            }
            for it in t.iterations
        ],
        "final_answer": t.final_answer,
        "qualified": t.qualified,
    }


def trace_from_dict(d: dict[str, Any]) -> RefinementTrace:
    return RefinementTrace(
        question_id=d["question_id"],
        iterations=tuple(
            RefinementIteration(
                index=it["index"],
                answer=it["answer"],
                feedback=feedback_from_dict(it["feedback"]),
                refined=it.get("refined"),
            )
            for it in d["iterations"]
        ),
        final_answer=d["final_answer"],
        qualified=d["qualified"],
    )


def dump_jsonl(rows: Iterable[dict[str, Any]]) -> str:
    return "".join(
        json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in rows
    )


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def atomic_write_text(path: Path, content: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_jsonl(path: Path, rows: Iterable[dict[str, Any]]) -> None:
    atomic_write_text(path, dump_jsonl(rows))
