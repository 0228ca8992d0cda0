"""Teacher-student progressive learning engine and training-data compiler."""

from .core import (
    Feedback,
    Question,
    QuestionCoord,
    RefinementIteration,
    RefinementTrace,
    RunConfig,
    Verdict,
    derive_question_id,
    validate_lineage,
)

__all__ = [
    "Feedback",
    "Question",
    "QuestionCoord",
    "RefinementIteration",
    "RefinementTrace",
    "RunConfig",
    "Verdict",
    "derive_question_id",
    "validate_lineage",
]
