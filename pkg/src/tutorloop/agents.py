"""Teacher and student roles: prompt rendering, backend calls, reply parsing."""

from __future__ import annotations

import re
from typing import Optional

from .backends import AgentBackend, ParseError
from .core import Feedback, Question, Verdict
from . import prompts

_NOT_NEEDED_RE = re.compile(r"revision is not needed", re.IGNORECASE)
_NEEDED_RE = re.compile(r"revision is needed", re.IGNORECASE)

# a score is the first integer in [1, 10] adjacent to a score marker
_SCORE_PATTERNS = [
    re.compile(r"score\s*(?:is|of|[:=])\s*(\d{1,2})", re.IGNORECASE),
    re.compile(r"\b(\d{1,2})\s*/\s*10\b"),
    re.compile(r"\b(\d{1,2})\s+out\s+of\s+10\b", re.IGNORECASE),
]


def _parse_score(text: str) -> Optional[int]:
    best: tuple[int, int] | None = None
    for pattern in _SCORE_PATTERNS:
        for match in pattern.finditer(text):
            value = int(match.group(1))
            if not 1 <= value <= 10:
                continue
            if best is None or match.start() < best[0]:
                best = (match.start(), value)
            break
    return best[1] if best else None


def parse_feedback(reply: str) -> Feedback:
    """Total parse of a teacher evaluation reply.

    Verdict comes from the explicit revision phrases when present; otherwise
    a parsed score >= 9 qualifies; otherwise the reply is treated as
    unqualified (fail-safe toward more refinement).
    """
    score = _parse_score(reply)
    if _NOT_NEEDED_RE.search(reply):
        verdict = Verdict.QUALIFIED
    elif _NEEDED_RE.search(reply):
        verdict = Verdict.UNQUALIFIED
    elif score is not None:
        verdict = Verdict.QUALIFIED if score >= 9 else Verdict.UNQUALIFIED
    else:
        verdict = Verdict.UNQUALIFIED
    return Feedback(verdict=verdict, text=reply, score=score)


class Teacher:
    def __init__(
        self,
        backend: AgentBackend,
        gen_temperature: float = 0.7,
        eval_temperature: float = 0.0,
    ) -> None:
        self.backend = backend
        self.gen_temperature = gen_temperature
        self.eval_temperature = eval_temperature

    def generalize(self, q: Question, m: int) -> list[str]:
        """Generate m similarly difficult variants of q, one backend call per
        variant (the questioning prompt asks for a single created question)."""
        if m < 1:
            raise ValueError("m must be >= 1")
        user = prompts.TEACHER_GENERALIZE.render(question=q.text)
        out: list[str] = []
        for j in range(1, m + 1):
            reply = self.backend.complete(
                prompts.TEACHER_SYSTEM.body,
                user,
                temperature=self.gen_temperature,
                call_seed=j,
            )
            text = reply.strip()
            if not text:
                raise ParseError(f"empty generalized question for {q.id}")
            out.append(text)
        return out

    def harden(self, q: Question) -> str:
        reply = self.backend.complete(
            prompts.TEACHER_SYSTEM.body,
            prompts.TEACHER_HARDEN.render(question=q.text),
            temperature=self.gen_temperature,
        )
        text = reply.strip()
        if not text:
            raise ParseError(f"empty hardened question for {q.id}")
        return text

    def evaluate(self, q: Question, answer: str) -> Feedback:
        if not answer:
            raise ValueError("cannot evaluate an empty answer")
        reply = self.backend.complete(
            prompts.TEACHER_SYSTEM.body,
            prompts.TEACHER_EVAL.render(question=q.text, answer=answer),
            temperature=self.eval_temperature,
        )
        return parse_feedback(reply)


class Student:
    def __init__(self, backend: AgentBackend, temperature: float = 0.7) -> None:
        self.backend = backend
        self.temperature = temperature

    def answer(
        self, q: Question, reference: Optional[tuple[str, str]] = None
    ) -> str:
        user = prompts.STUDENT_ANSWER.render(question=q.text)
        if reference is not None:
            ref_q, ref_a = reference
            user = prompts.render_reference(ref_q, ref_a) + "\n\n" + user
        reply = self.backend.complete(
            prompts.STUDENT_SYSTEM.body, user, temperature=self.temperature
        )
        text = reply.strip()
        if not text:
            raise ParseError(f"empty answer for {q.id}")
        return text

    def refine(self, q: Question, answer: str, feedback: Feedback) -> str:
        if feedback.verdict is not Verdict.UNQUALIFIED:
            raise ValueError("refinement requires unqualified feedback")
        reply = self.backend.complete(
            prompts.STUDENT_SYSTEM.body,
            prompts.STUDENT_REFINE.render(
                question=q.text, answer=answer, feedback=feedback.text
            ),
            temperature=self.temperature,
        )
        text = reply.strip()
        if not text:
            raise ParseError(f"empty refined answer for {q.id}")
        return text
