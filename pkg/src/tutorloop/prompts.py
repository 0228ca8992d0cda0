"""Prompt templates for the teacher and student roles.

Template bodies are fixed text; slot markers {question}, {answer} and
{feedback} are substituted in a single pass so slot values are never
rescanned for markers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_SLOT_RE = re.compile(r"\{(question|answer|feedback)\}")


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    body: str

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(_SLOT_RE.findall(self.body))

    def render(self, **values: str) -> str:
        provided = set(values)
        if provided != self.slots:
            raise ValueError(
                f"template {self.kind!r} takes slots {sorted(self.slots)}, "
                f"got {sorted(provided)}"
            )
        return _SLOT_RE.sub(lambda m: values[m.group(1)], self.body)


TEACHER_SYSTEM = PromptTemplate(
    "teacher_system",
    "You are a professional teacher teaching math subject.\n"
    "\n"
    "Given a math problem, your task is to evaluate the answer from the student.\n"
    "\n"
    "If ask, you can test the student with newly generalized question or newly "
    "generated harder question.",
)

TEACHER_EVAL = PromptTemplate(
    "teacher_eval",
    "For the question: {question},\n"
    "here is a proposed answer:\n"
    "{answer}\n"
    "Provide feedback or critique for the previous response.\n"
    "Please keep it under 100 words.\n"
    "Rate the quality of the answer on a scale from 1 (being poor or nonsensical) "
    "to 10 (perfect).\n"
    'Also indicate whether a revision is necessary by stating either "Revision is '
    'needed" or "Revision is not needed".\n'
    "Typically, a score below 9 suggests that a revision should be considered.\n"
    "Feedback:",
)

TEACHER_GENERALIZE = PromptTemplate(
    "teacher_generalize",
    "Your task is to use the provided question as a basis for crafting a new, but "
    "generalized question. This newly formulated question should require a "
    "generalized approach to find the solution but should be phrased differently. "
    "Ensure that the new question is of comparable length and complexity to the "
    "original. It should be clear, concise, and answerable by people.\n"
    "Given Question:\n"
    "{question}\n"
    "Created Question:",
)

TEACHER_HARDEN = PromptTemplate(
    "teacher_harden",
    "Your role is to modify an existing math question, elevating its complexity "
    "to challenge advanced AI systems.\n"
    "To achieve this, incorporate an additional constraint or requirement into "
    "the original question.\n"
    "The modified question should be more challenging, requiring more intricate "
    "solutions or additional mathematical steps.\n"
    "Strive to keep the question concise and understandable to ensure it remains "
    "solvable by humans.\n"
    "Given Question:\n"
    "{question}\n"
    "Created Question:",
)

STUDENT_SYSTEM = PromptTemplate(
    "student_system",
    "As a student studying mathematics, your responsibility is to thoughtfully "
    "respond to math questions. If you receive feedback from your teacher, use it "
    "to revise and improve your answers. This approach helps you learn and "
    "understand mathematical concepts more deeply.",
)

STUDENT_ANSWER = PromptTemplate(
    "student_answer",
    "Answer the question: {question}.\nLet's think step by step.",
)

STUDENT_REFINE = PromptTemplate(
    "student_refine",
    "When provided with a question, your initial answer, and feedback from a "
    "teacher, your task is to revise the answer accordingly. Focus on "
    "incorporating the teacher's feedback to improve your response. Present the "
    "revised answer clearly and concisely, as if it were your first attempt at "
    "answering the question.\n"
    "The input question is {question}\n"
    "The original answer is {answer}\n"
    "The feedback to the answer is {feedback}\n"
    "Output revised answer:",
)

# Wording of the solved-example preamble for the generalized stage is an
# artifact choice; the protocol only requires that a reference may be shown.
REFERENCE_PREFIX = "Here is a solved example. Question: {question} Answer: {answer}"

ALL_TEMPLATES: dict[str, PromptTemplate] = {
    t.kind: t
    for t in (
        TEACHER_SYSTEM,
        TEACHER_EVAL,
        TEACHER_GENERALIZE,
        TEACHER_HARDEN,
        STUDENT_SYSTEM,
        STUDENT_ANSWER,
        STUDENT_REFINE,
    )
}


def render_reference(question: str, answer: str) -> str:
    return (
        REFERENCE_PREFIX.replace("{question}", question).replace("{answer}", answer)
    )
