"""Progressive-learning engine: the nested basic/generalized/harder loop with
an inner answer-evaluate-refine cycle, checkpointing, and bounded concurrency."""

from __future__ import annotations

import logging
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agents import Student, Teacher
from .backends import AgentBackend, BackendError, ParseError, build_backend
from .core import (
    Question,
    QuestionCoord,
    RefinementIteration,
    RefinementTrace,
    RunConfig,
    Verdict,
    derive_question_id,
)
from . import jsonio

log = logging.getLogger(__name__)

META_FILE = "state.meta"
QUESTIONS_FILE = "questions.jsonl"
TRACES_FILE = "traces.jsonl"

MAX_TASK_RETRIES = 2


class ConfigMismatch(Exception):
    """Resume attempted with a config that differs from the checkpoint's."""


class CorruptCheckpoint(Exception):
    """Checkpoint files are inconsistent or unparseable."""


class RunFailure(Exception):
    """Some questions exhausted their retries; partial output is checkpointed."""

    def __init__(self, failures: dict[str, str]) -> None:
        self.failures = failures
        summary = ", ".join(f"{qid}: {err}" for qid, err in sorted(failures.items()))
        super().__init__(f"{len(failures)} question(s) failed: {summary}")


@dataclass
class RunState:
    config_hash: str
    questions: dict[str, Question] = field(default_factory=dict)
    traces: dict[str, RefinementTrace] = field(default_factory=dict)


def iter_refine(
    q: Question,
    teacher: Teacher,
    student: Student,
    max_refine_iters: int,
    reference: Optional[tuple[str, str]] = None,
) -> RefinementTrace:
    """Answer, evaluate, and refine until the teacher qualifies the answer or
    the iteration budget is spent. Performs at most max_refine_iters
    evaluations; refinement is skipped once the answer qualifies."""
    answer = student.answer(q, reference=reference)
    iterations: list[RefinementIteration] = []
    for index in range(max_refine_iters):
        feedback = teacher.evaluate(q, answer)
        refined = None
        if feedback.verdict is Verdict.UNQUALIFIED and index + 1 < max_refine_iters:
            refined = student.refine(q, answer, feedback)
        iterations.append(
            RefinementIteration(
                index=index, answer=answer, feedback=feedback, refined=refined
            )
        )
        if feedback.verdict is Verdict.QUALIFIED or refined is None:
            break
        answer = refined
    return RefinementTrace.from_iterations(q.id, iterations)


@dataclass(frozen=True)
class _ChainStep:
    """Refine the variant-0 question of one level, then create its
    generalized siblings and the next hardened question."""

    question: Question

    def key(self) -> str:
        return self.question.id

    def run(self, teacher: Teacher, student: Student, config: RunConfig):
        trace = iter_refine(self.question, teacher, student, config.max_refine_iters)
        gen_texts: list[str] = []
        if config.m_generalized > 0:
            gen_texts = teacher.generalize(self.question, config.m_generalized)
        hard_text = None
        if self.question.coord.level + 1 < config.n_levels:
            hard_text = teacher.harden(self.question)
        return trace, gen_texts, hard_text


@dataclass(frozen=True)
class _VariantStep:
    """Refine one generalized variant, with the solved variant-0 pair as a
    reference example."""

    question: Question
    reference: tuple[str, str]

    def key(self) -> str:
        return self.question.id

    def run(self, teacher: Teacher, student: Student, config: RunConfig):
        return iter_refine(
            self.question, teacher, student, config.max_refine_iters, self.reference
        )


class ProgressiveRunner:
    def __init__(
        self,
        config: RunConfig,
        backend: Optional[AgentBackend] = None,
        checkpoint_dir: Optional[Path] = None,
        checkpoint_every: int = 25,
    ) -> None:
        self.config = config
        self.backend = backend or build_backend(config.backend, config.rng_seed)
        desc = config.backend
        self.teacher = Teacher(
            self.backend,
            gen_temperature=float(desc.get("gen_temperature", 0.7)),
            eval_temperature=float(desc.get("eval_temperature", 0.0)),
        )
        self.student = Student(
            self.backend, temperature=float(desc.get("gen_temperature", 0.7))
        )
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoint_every = checkpoint_every

    # -- checkpointing -----------------------------------------------------

    def checkpoint(self, state: RunState) -> None:
        if self.checkpoint_dir is None:
            return
        questions = sorted(state.questions.values(), key=lambda q: q.id)
        traces = sorted(state.traces.values(), key=lambda t: t.question_id)
        jsonio.write_jsonl(
            self.checkpoint_dir / QUESTIONS_FILE,
            (jsonio.question_to_dict(q) for q in questions),
        )
        jsonio.write_jsonl(
            self.checkpoint_dir / TRACES_FILE,
            (jsonio.trace_to_dict(t) for t in traces),
        )
        meta = {
            "config_hash": state.config_hash,
            "n_questions": len(questions),
            "n_traces": len(traces),
        }
        jsonio.atomic_write_text(
            self.checkpoint_dir / META_FILE, jsonio.dump_jsonl([meta])
        )

    def load_state(self) -> RunState:
        fresh = RunState(config_hash=self.config.protocol_hash())
        if self.checkpoint_dir is None:
            return fresh
        meta_path = self.checkpoint_dir / META_FILE
        if not meta_path.exists():
            return fresh
        try:
            meta = jsonio.read_jsonl(meta_path)[0]
        except (ValueError, IndexError) as exc:
            raise CorruptCheckpoint(f"unreadable {META_FILE}: {exc}") from exc
        if meta.get("config_hash") != fresh.config_hash:
            raise ConfigMismatch(
                "checkpoint was produced by a different configuration"
            )
        try:
            questions = [
                jsonio.question_from_dict(d)
                for d in jsonio.read_jsonl(self.checkpoint_dir / QUESTIONS_FILE)
            ]
            traces = [
                jsonio.trace_from_dict(d)
                for d in jsonio.read_jsonl(self.checkpoint_dir / TRACES_FILE)
            ]
        except (KeyError, ValueError, FileNotFoundError) as exc:
            raise CorruptCheckpoint(f"unreadable checkpoint data: {exc}") from exc
        if len(questions) != meta.get("n_questions") or len(traces) != meta.get(
            "n_traces"
        ):
            raise CorruptCheckpoint("checkpoint counts do not match contents")
        fresh.questions = {q.id: q for q in questions}
        fresh.traces = {t.question_id: t for t in traces}
        return fresh

    # -- task graph --------------------------------------------------------

    def _commit_chain(
        self, state: RunState, step: _ChainStep, result
    ) -> list[object]:
        trace, gen_texts, hard_text = result
        state.traces[step.question.id] = trace
        new_tasks: list[object] = []
        q = step.question
        for j, text in enumerate(gen_texts, start=1):
            coord = QuestionCoord(q.coord.level, j)
            child = Question(
                id=derive_question_id(q.seed_id, coord),
                seed_id=q.seed_id,
                parent_id=q.id,
                coord=coord,
                text=text,
            )
            state.questions[child.id] = child
            new_tasks.append(_VariantStep(child, (q.text, trace.final_answer)))
        if hard_text is not None:
            coord = QuestionCoord(q.coord.level + 1, 0)
            harder = Question(
                id=derive_question_id(q.seed_id, coord),
                seed_id=q.seed_id,
                parent_id=q.id,
                coord=coord,
                text=hard_text,
            )
            state.questions[harder.id] = harder
            new_tasks.append(_ChainStep(harder))
        return new_tasks

    def _pending_tasks(self, state: RunState, seeds: list[Question]) -> list[object]:
        """Rebuild the ready queue from checkpointed progress. A chain step's
        trace and its created children are committed together, so a present
        variant-0 trace implies its children questions exist."""
        tasks: list[object] = []
        for seed in seeds:
            level = 0
            while level < self.config.n_levels:
                vid = derive_question_id(seed.seed_id, QuestionCoord(level, 0))
                question = state.questions[vid]
                trace = state.traces.get(vid)
                if trace is None:
                    tasks.append(_ChainStep(question))
                    break
                for j in range(1, self.config.m_generalized + 1):
                    cid = derive_question_id(seed.seed_id, QuestionCoord(level, j))
                    if cid not in state.traces:
                        tasks.append(
                            _VariantStep(
                                state.questions[cid],
                                (question.text, trace.final_answer),
                            )
                        )
                level += 1
        return tasks

    # -- main loop ---------------------------------------------------------

    def run(self, seeds: list[Question]) -> RunState:
        seen_ids = set()
        for seed in seeds:
            if seed.coord != QuestionCoord(0, 0):
                raise ValueError(f"seed {seed.id} must have coord (0, 0)")
            if seed.id in seen_ids:
                raise ValueError(f"duplicate seed id {seed.id}")
            seen_ids.add(seed.id)

        state = self.load_state()
        for seed in seeds:
            state.questions.setdefault(seed.id, seed)

        ready = self._pending_tasks(state, seeds)
        attempts: dict[str, int] = {}
        failures: dict[str, str] = {}
        completed = 0

        try:
            with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                futures: dict[Future, object] = {}
                while ready or futures:
                    while ready:
                        task = ready.pop()
                        futures[
                            pool.submit(task.run, self.teacher, self.student, self.config)
                        ] = task
                    done, _ = wait(futures, return_when=FIRST_COMPLETED)
                    for fut in done:
                        task = futures.pop(fut)
                        try:
                            result = fut.result()
                        except (BackendError, ParseError) as exc:
                            key = task.key()
                            attempts[key] = attempts.get(key, 0) + 1
                            if attempts[key] <= MAX_TASK_RETRIES:
                                log.warning(
                                    "retrying %s (attempt %d): %s",
                                    key,
                                    attempts[key] + 1,
                                    exc,
                                )
                                ready.append(task)
                            else:
                                failures[key] = str(exc)
                            continue
                        if isinstance(task, _ChainStep):
                            ready.extend(self._commit_chain(state, task, result))
                        else:
                            state.traces[task.question.id] = result
                        completed += 1
                        if completed % self.checkpoint_every == 0:
                            self.checkpoint(state)
        finally:
            self.checkpoint(state)
        if failures:
            raise RunFailure(failures)
        return state


def run_progressive(
    seeds: list[Question],
    config: RunConfig,
    backend: Optional[AgentBackend] = None,
    checkpoint_dir: Optional[Path] = None,
    checkpoint_every: int = 25,
) -> tuple[dict[str, Question], dict[str, RefinementTrace]]:
    runner = ProgressiveRunner(
        config,
        backend=backend,
        checkpoint_dir=checkpoint_dir,
        checkpoint_every=checkpoint_every,
    )
    state = runner.run(seeds)
    return state.questions, state.traces
