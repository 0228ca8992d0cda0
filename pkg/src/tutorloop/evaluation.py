"""Answer extraction, normalization, exact-match scoring, corpus ingestion,
and run-level accuracy reports."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional


class FormatError(Exception):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoAnswerFound(Exception):
    pass


class KeyMismatch(Exception):
    pass


@dataclass(frozen=True)
class CorpusItem:
    id: str
    question: str
    gold: Optional[str]
    source: str


@dataclass
class AccuracyReport:
    total: int
    correct: int
    per_level: dict[int, dict[str, int]]
    failures: list[str]

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "per_level": {
                str(level): dict(counts) for level, counts in sorted(self.per_level.items())
            },
            "failures": sorted(self.failures),
        }


# --- normalization and extraction -----------------------------------------

_CUE_RE = re.compile(r"(?:the answer is|answer:)\s*", re.IGNORECASE)
_NUMBER_OR_FRACTION_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?(?:\s*/\s*-?\d+)?")
_SIMPLE_FRACTION_RE = re.compile(r"(-?\d+)\s*/\s*(-?\d+)$")


def normalize_answer(text: str) -> str:
    """Canonical string form: strips currency/percent symbols, thousands
    commas, trailing periods and leading zeros; reduces a/b fractions."""
    s = text.strip()
    # stripping one symbol can expose another; iterate to a fixpoint
    while True:
        prev = s
        s = s.strip("$").replace("$", "")
        s = s.rstrip("%")
        s = s.replace(",", "")
        s = s.rstrip(".") if not re.fullmatch(r"-?\d+\.\d+", s) else s
        s = s.strip()
        if s == prev:
            break
    frac = _SIMPLE_FRACTION_RE.fullmatch(s)
    if frac:
        num, den = int(frac.group(1)), int(frac.group(2))
        if den != 0:
            reduced = Fraction(num, den)
            if reduced.denominator == 1:
                return str(reduced.numerator)
            return f"{reduced.numerator}/{reduced.denominator}"
    s = re.sub(r"^(-?)0+(?=\d)", r"\1", s)
    return s


def extract_boxed(text: str) -> Optional[str]:
    """Content of the last \\boxed{...}, handling nested braces."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start == -1:
        return None
    depth = 1
    i = start + len(marker)
    out = []
    while i < len(text) and depth:
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                break
        out.append(ch)
        i += 1
    if depth:
        return None
    return "".join(out)


def extract_final_answer(completion: str) -> str:
    """Pull the final answer from a completion: last boxed expression, then
    the last answer cue, then the last standalone number or fraction."""
    boxed = extract_boxed(completion)
    if boxed is not None:
        normalized = normalize_answer(boxed)
        if normalized:
            return normalized
    cues = list(_CUE_RE.finditer(completion))
    if cues:
        rest = completion[cues[-1].end():]
        tail = rest.splitlines()[0] if rest else ""
        lead = re.match(r"\$?-?\d[\d,]*(?:\.\d+)?(?:\s*/\s*\d+)?", tail)
        normalized = normalize_answer(lead.group(0) if lead else tail)
        if normalized:
            return normalized
    numbers = _NUMBER_OR_FRACTION_RE.findall(completion)
    if numbers:
        return normalize_answer(numbers[-1])
    raise NoAnswerFound(f"no extractable answer in: {completion[:80]!r}")


def score(pred: str, gold: str) -> bool:
    """Exact match on normalized strings; numeric strings also compare as
    exact rationals."""
    if pred == gold:
        return True
    try:
        return Fraction(pred) == Fraction(gold)
    except (ValueError, ZeroDivisionError):
        return False


# --- corpus loading -------------------------------------------------------

GSM8K_MARKER = "#### "


def _item_id(obj: Mapping[str, Any], index: int) -> str:
    raw = obj.get("id")
    return str(raw) if raw is not None else f"item{index:05d}"


def load_corpus(path: Path, fmt: str) -> list[CorpusItem]:
    """Load a labeled question corpus.

    Formats: 'gsm8k' (JSONL question/answer, gold after the final '#### '
    marker), 'math' (JSONL problem/solution, gold in the last boxed
    expression), 'plain' (tab-separated question/answer; answer optional).
    """
    if fmt not in ("plain", "gsm8k", "math"):
        raise ValueError(f"unknown corpus format: {fmt!r}")
    path = Path(path)
    items: list[CorpusItem] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "plain":
                question, _, answer = line.partition("\t")
                if not question.strip():
                    raise FormatError("empty question", lineno)
                items.append(
                    CorpusItem(
                        id=f"item{len(items):05d}",
                        question=question.strip(),
                        gold=answer.strip() or None,
                        source="plain",
                    )
                )
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc}", lineno) from exc
            if fmt == "gsm8k":
                question = obj.get("question")
                answer = obj.get("answer", "")
                if not question:
                    raise FormatError("missing question field", lineno)
                pos = answer.rfind(GSM8K_MARKER)
                if pos == -1:
                    raise FormatError("no '#### ' answer marker", lineno)
                gold = answer[pos + len(GSM8K_MARKER):].strip()
                if not gold:
                    raise FormatError("empty gold answer", lineno)
                items.append(
                    CorpusItem(
                        id=_item_id(obj, len(items)),
                        question=question,
                        gold=gold,
                        source="gsm8k",
                    )
                )
            elif fmt == "math":
                question = obj.get("problem")
                solution = obj.get("solution", "")
                if not question:
                    raise FormatError("missing problem field", lineno)
                gold = extract_boxed(solution)
                if gold is None:
                    raise FormatError("no boxed expression in solution", lineno)
                items.append(
                    CorpusItem(
                        id=_item_id(obj, len(items)),
                        question=question,
                        gold=gold,
                        source="math",
                    )
                )
            else:
                raise ValueError(f"unknown corpus format: {fmt!r}")
    return items


# --- report assembly ------------------------------------------------------

def evaluate_completions(
    completions: Mapping[str, str],
    corpus: list[CorpusItem],
    levels: Optional[Mapping[str, int]] = None,
) -> AccuracyReport:
    """Score completions against a labeled corpus. Missing completions count
    as incorrect and are listed; completions for unknown ids are an error."""
    known = {item.id for item in corpus}
    unknown = set(completions) - known
    if unknown:
        raise KeyMismatch(f"completions reference unknown ids: {sorted(unknown)[:5]}")
    per_level: dict[int, dict[str, int]] = {}
    failures: list[str] = []
    correct = 0
    for item in corpus:
        level = levels.get(item.id, 0) if levels else 0
        bucket = per_level.setdefault(level, {"total": 0, "correct": 0})
        bucket["total"] += 1
        completion = completions.get(item.id)
        ok = False
        if completion is not None and item.gold is not None:
            try:
                ok = score(
                    extract_final_answer(completion), normalize_answer(item.gold)
                )
            except NoAnswerFound:
                ok = False
        if ok:
            correct += 1
            bucket["correct"] += 1
        else:
            failures.append(item.id)
    return AccuracyReport(
        total=len(corpus), correct=correct, per_level=per_level, failures=failures
    )


def format_report(report: AccuracyReport) -> str:
    lines = [
        f"total    {report.total}",
        f"correct  {report.correct}",
        f"accuracy {report.accuracy:.4f}",
    ]
    for level, counts in sorted(report.per_level.items()):
        lines.append(
            f"level {level}: {counts['correct']}/{counts['total']}"
        )
    if report.failures:
        shown = ", ".join(sorted(report.failures)[:10])
        lines.append(f"failures ({len(report.failures)}): {shown}")
    return "\n".join(lines)
