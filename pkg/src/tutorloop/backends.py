"""Agent backends: a remote chat-completions client and a deterministic
scripted arithmetic backend used for testing the protocol at desk scale."""

from __future__ import annotations

import abc
import os
import random
import re
import time
from typing import Any, Optional

import httpx

from .core import Question, QuestionCoord, derive_question_id


class BackendError(Exception):
    """Transport or HTTP failure that survived the retry policy."""


class ParseError(Exception):
    """A backend reply (or prompt, for the scripted backend) was unusable."""


class AgentBackend(abc.ABC):
    @abc.abstractmethod
    def complete(
        self,
        system_prompt: str,
        user_prompt: str,
        *,
        temperature: float = 0.0,
        call_seed: int = 0,
    ) -> str:
        """Return the completion text for one chat exchange.

        call_seed distinguishes repeated calls with an identical prompt
        (e.g. the m generalization calls for one question); deterministic
        backends fold it into their rng stream, remote backends may forward
        it as a sampling seed.
        """


class RemoteBackend(AgentBackend):
    """Chat-completions HTTP client with bounded retries.

    Retries only transport errors and HTTP 429/5xx, with exponential backoff
    plus jitter; everything else surfaces immediately as BackendError.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "TUTORLOOP_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        transport: Optional[httpx.BaseTransport] = None,
    ) -> None:
        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise ValueError(f"environment variable {api_key_env} is not set")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._client = httpx.Client(
            timeout=timeout,
            headers={"Authorization": f"Bearer {api_key}"},
            transport=transport,
        )

    def complete(
        self,
        system_prompt: str,
        user_prompt: str,
        *,
        temperature: float = 0.0,
        call_seed: int = 0,
    ) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
            "temperature": temperature,
            "seed": call_seed,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay * (0.5 + random.random()))
            try:
                resp = self._client.post(
                    f"{self.base_url}/chat/completions", json=payload
                )
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise ParseError(f"malformed completion response: {exc}") from exc
            if not isinstance(text, str) or not text.strip():
                raise ParseError("backend returned an empty completion")
            return text
        raise BackendError(f"all {self.max_attempts} attempts failed: {last_error}")


# --- scripted arithmetic micro-domain -------------------------------------

_EXPR_RE = re.compile(r"\s*-?\d+(?:\s*[+-]\s*\d+)*\s*$")
_TOKEN_RE = re.compile(r"(-?\d+)|([+-])")
_LAST_NUMBER_RE = re.compile(r"-?\d+")


def parse_expression(text: str) -> tuple[list[int], list[str]]:
    """Split a flat integer expression like '3 + 4 - 2' into operands and
    operators. Raises ParseError for anything else."""
    if not _EXPR_RE.match(text):
        raise ParseError(f"not a flat arithmetic expression: {text!r}")
    values: list[int] = []
    operators: list[str] = []
    expect_value = True
    for match in _TOKEN_RE.finditer(text):
        number, op = match.groups()
        if number is not None and expect_value:
            values.append(int(number))
            expect_value = False
        elif op is not None and not expect_value:
            operators.append(op)
            expect_value = True
        else:
            raise ParseError(f"malformed expression: {text!r}")
    if expect_value:
        raise ParseError(f"malformed expression: {text!r}")
    return values, operators


def evaluate_expression(text: str) -> int:
    values, operators = parse_expression(text)
    total = values[0]
    for op, value in zip(operators, values[1:]):
        total = total + value if op == "+" else total - value
    return total


def format_expression(values: list[int], operators: list[str]) -> str:
    parts = [str(values[0])]
    for op, value in zip(operators, values[1:]):
        parts.append(op)
        parts.append(str(value))
    return " ".join(parts)


def last_number(text: str) -> Optional[int]:
    matches = _LAST_NUMBER_RE.findall(text)
    return int(matches[-1]) if matches else None


class ScriptedBackend(AgentBackend):
    """Deterministic stand-in for a language model over flat integer
    arithmetic.

    Behaviour rules:
      * answer: the oracle value with probability (1 - error_rate), else
        value + 1;
      * evaluate: exact match of the answer's final number against the
        oracle, score 10 (qualified) or 3 (unqualified, naming the value);
      * generalize: resample operands, preserving operator count and total;
      * harden: append one "+ operand";
      * refine: the oracle answer, or the old answer again when stubborn.

    Every draw comes from a fresh rng keyed on (rng_seed, operation,
    question text, call_seed), so outputs never depend on call interleaving.
    """

    def __init__(
        self, rng_seed: int = 0, error_rate: float = 0.0, stubborn: bool = False
    ) -> None:
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")
        self.rng_seed = rng_seed
        self.error_rate = error_rate
        self.stubborn = stubborn

    def _rng(self, op: str, question: str, call_seed: int = 0) -> random.Random:
        return random.Random(f"{self.rng_seed}|{op}|{question}|{call_seed}")

    def complete(
        self,
        system_prompt: str,
        user_prompt: str,
        *,
        temperature: float = 0.0,
        call_seed: int = 0,
    ) -> str:
        del system_prompt, temperature
        for matcher, handler in self._DISPATCH:
            match = matcher.search(user_prompt)
            if match:
                return handler(self, match, call_seed)
        raise ParseError("scripted backend cannot interpret this prompt")

    # -- handlers ----------------------------------------------------------

    def _handle_generalize(self, match: re.Match, call_seed: int) -> str:
        question = match.group(1).strip()
        values, operators = parse_expression(question)
        target = evaluate_expression(question)
        rng = self._rng("generalize", question, call_seed)
        if len(values) >= 2 and all(op == "+" for op in operators):
            upper = max(max(values), 1) + 5
            for _ in range(50):
                head = [rng.randint(0, upper) for _ in values[:-1]]
                tail = target - sum(head)
                if tail < 0:
                    continue
                candidate = format_expression(head + [tail], operators)
                if candidate != question:
                    return candidate
        # mixed-operator or single-operand fallback: reverse when value-safe
        if len(values) >= 2 and all(op == "+" for op in operators):
            return format_expression(list(reversed(values)), operators)
        return question

    def _handle_harden(self, match: re.Match, call_seed: int) -> str:
        question = match.group(1).strip()
        values, operators = parse_expression(question)
        rng = self._rng("harden", question, call_seed)
        extra = rng.randint(2, 9)
        return format_expression(values + [extra], operators + ["+"])

    def _handle_evaluate(self, match: re.Match, call_seed: int) -> str:
        question = match.group(1).strip()
        answer = match.group(2)
        expected = evaluate_expression(question)
        got = last_number(answer)
        if got == expected:
            return (
                "The reasoning is sound and the final result is correct. "
                "Score: 10/10. Revision is not needed."
            )
        return (
            f"The final result {got} is incorrect; the expected value is "
            f"{expected}. Score: 3/10. Revision is needed."
        )

    def _handle_answer(self, match: re.Match, call_seed: int) -> str:
        question = match.group(1).strip()
        value = evaluate_expression(question)
        rng = self._rng("answer", question, call_seed)
        wrong = rng.random() < self.error_rate
        final = value + 1 if wrong else value
        return (
            f"We work through {question} one operation at a time, keeping a "
            f"running total. The answer is {final}."
        )

    def _handle_refine(self, match: re.Match, call_seed: int) -> str:
        question = match.group(1).strip()
        answer = match.group(2)
        if self.stubborn:
            return answer
        value = evaluate_expression(question)
        return (
            f"Taking the feedback into account, we recompute {question} "
            f"carefully. The answer is {value}."
        )

    # Both questioning prompts contain "Given Question:"; the anchored
    # prefixes tell them apart.
    _DISPATCH: list[tuple[re.Pattern, Any]]


ScriptedBackend._DISPATCH = [
    (
        re.compile(r"\AYour task is to use the provided question.*?Given Question:\n(.*?)\nCreated Question:", re.DOTALL),
        ScriptedBackend._handle_generalize,
    ),
    (
        re.compile(r"\AYour role is to modify an existing math question.*?Given Question:\n(.*?)\nCreated Question:", re.DOTALL),
        ScriptedBackend._handle_harden,
    ),
    (
        re.compile(
            r"\AFor the question: (.*?),\nhere is a proposed answer:\n"
            r"(.*)\nProvide feedback or critique",
            re.DOTALL,
        ),
        ScriptedBackend._handle_evaluate,
    ),
    (
        re.compile(
            r"Answer the question: (.*)\.\nLet's think step by step\.\Z",
            re.DOTALL,
        ),
        ScriptedBackend._handle_answer,
    ),
    (
        re.compile(
            r"\AWhen provided with a question.*?The input question is (.*?)\n"
            r"The original answer is (.*?)\n"
            r"The feedback to the answer is (.*)\nOutput revised answer:",
            re.DOTALL,
        ),
        ScriptedBackend._handle_refine,
    ),
]


def build_backend(descriptor: dict[str, Any], rng_seed: int = 0) -> AgentBackend:
    """Construct a backend from a config-file descriptor block."""
    kind = descriptor.get("kind")
    if kind == "scripted":
        return ScriptedBackend(
            rng_seed=rng_seed,
            error_rate=float(descriptor.get("error_rate", 0.0)),
            stubborn=bool(descriptor.get("stubborn", False)),
        )
    if kind == "remote":
        return RemoteBackend(
            base_url=descriptor["base_url"],
            model=descriptor["model"],
            api_key_env=descriptor.get("api_key_env", "TUTORLOOP_API_KEY"),
            timeout=float(descriptor.get("timeout", 60.0)),
            max_attempts=int(descriptor.get("max_attempts", 5)),
        )
    raise ValueError(f"unknown backend kind: {kind!r}")


def generate_arithmetic_corpus(
    count: int, rng_seed: int = 0, min_terms: int = 2, max_terms: int = 3
) -> list[Question]:
    """Produce distinct flat-addition seed questions with gold answers, for
    scripted runs and tests."""
    rng = random.Random(f"corpus|{rng_seed}")
    seen: set[str] = set()
    seeds: list[Question] = []
    while len(seeds) < count:
        n_terms = rng.randint(min_terms, max_terms)
        values = [rng.randint(0, 50) for _ in range(n_terms)]
        text = format_expression(values, ["+"] * (n_terms - 1))
        if text in seen:
            continue
        seen.add(text)
        seed_id = f"s{len(seeds):05d}"
        coord = QuestionCoord(0, 0)
        seeds.append(
            Question(
                id=derive_question_id(seed_id, coord),
                seed_id=seed_id,
                coord=coord,
                text=text,
                gold_answer=str(sum(values)),
            )
        )
    return seeds
