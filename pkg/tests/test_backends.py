import json

import httpx
import pytest

from tutorloop import prompts
from tutorloop.backends import (
    BackendError,
    ParseError,
    RemoteBackend,
    ScriptedBackend,
    build_backend,
    evaluate_expression,
    format_expression,
    generate_arithmetic_corpus,
    last_number,
    parse_expression,
)


class TestExpressions:
    def test_parse_simple(self):
        assert parse_expression("3 + 4") == ([3, 4], ["+"])
        assert parse_expression("10 - 2 + 5") == ([10, 2, 5], ["-", "+"])

    def test_evaluate(self):
        assert evaluate_expression("3 + 4") == 7
        assert evaluate_expression("10 - 2 + 5") == 13
        assert evaluate_expression("7") == 7

    def test_rejects_non_arithmetic(self):
        with pytest.raises(ParseError):
            parse_expression("what is 3 + 4?")

    def test_format_roundtrip(self):
        values, operators = parse_expression("12 + 3 - 4")
        assert format_expression(values, operators) == "12 + 3 - 4"

    def test_last_number(self):
        assert last_number("The answer is 42.") == 42
        assert last_number("first 1 then -3") == -3
        assert last_number("none here") is None


def scripted(**kwargs):
    return ScriptedBackend(rng_seed=7, **kwargs)


def gen_prompt(question):
    return prompts.TEACHER_GENERALIZE.render(question=question)


def hard_prompt(question):
    return prompts.TEACHER_HARDEN.render(question=question)


def eval_prompt(question, answer):
    return prompts.TEACHER_EVAL.render(question=question, answer=answer)


def answer_prompt(question):
    return prompts.STUDENT_ANSWER.render(question=question)


def refine_prompt(question, answer, feedback):
    return prompts.STUDENT_REFINE.render(
        question=question, answer=answer, feedback=feedback
    )


class TestScriptedGeneralize:
    def test_preserves_total_and_operator_count(self):
        backend = scripted()
        created = backend.complete("", gen_prompt("3 + 4"), call_seed=1)
        values, operators = parse_expression(created)
        assert evaluate_expression(created) == 7
        assert len(operators) == 1
        assert created != "3 + 4"

    def test_distinct_variants_per_call_seed(self):
        backend = scripted()
        a = backend.complete("", gen_prompt("14 + 9 + 3"), call_seed=1)
        b = backend.complete("", gen_prompt("14 + 9 + 3"), call_seed=2)
        assert a != b
        assert evaluate_expression(a) == evaluate_expression(b) == 26

    def test_deterministic_across_instances(self):
        a = scripted().complete("", gen_prompt("8 + 15"), call_seed=1)
        b = scripted().complete("", gen_prompt("8 + 15"), call_seed=1)
        assert a == b


class TestScriptedHarden:
    def test_appends_one_operation(self):
        backend = scripted()
        harder = backend.complete("", hard_prompt("3 + 4"))
        values, operators = parse_expression(harder)
        assert len(operators) == 2
        assert harder.startswith("3 + 4 + ")

    def test_twice_grows_operator_count_by_two(self):
        backend = scripted()
        once = backend.complete("", hard_prompt("3 + 4"))
        twice = backend.complete("", hard_prompt(once))
        assert len(parse_expression(twice)[1]) == 3


class TestScriptedEvaluate:
    def test_correct_answer_qualifies(self):
        reply = scripted().complete("", eval_prompt("3 + 4", "The answer is 7"))
        assert "Revision is not needed" in reply
        assert "10/10" in reply

    def test_wrong_answer_names_expected_value(self):
        reply = scripted().complete("", eval_prompt("3 + 4", "The answer is 8"))
        assert "Revision is needed" in reply
        assert "7" in reply
        assert "3/10" in reply


class TestScriptedAnswer:
    def test_error_rate_zero_is_correct(self):
        reply = scripted(error_rate=0.0).complete("", answer_prompt("3 + 4"))
        assert reply.endswith("The answer is 7.")

    def test_error_rate_one_is_wrong(self):
        reply = scripted(error_rate=1.0).complete("", answer_prompt("3 + 4"))
        assert last_number(reply) != 7

    def test_reference_prefix_is_ignored_for_computation(self):
        user = (
            prompts.render_reference("2 + 2", "The answer is 4")
            + "\n\n"
            + answer_prompt("3 + 4")
        )
        reply = scripted().complete("", user)
        assert reply.endswith("The answer is 7.")

    def test_error_rate_statistics(self):
        backend = scripted(error_rate=0.3)
        seeds = generate_arithmetic_corpus(500, rng_seed=3)
        wrong = 0
        for seed in seeds:
            reply = backend.complete("", answer_prompt(seed.text))
            if last_number(reply) != int(seed.gold_answer):
                wrong += 1
        assert 0.24 < wrong / 500 < 0.36


class TestScriptedRefine:
    def test_refine_emits_oracle_answer(self):
        reply = scripted().complete(
            "", refine_prompt("3 + 4", "The answer is 8", "Wrong.")
        )
        assert reply.endswith("The answer is 7.")

    def test_stubborn_repeats_answer(self):
        reply = scripted(stubborn=True).complete(
            "", refine_prompt("3 + 4", "The answer is 8", "Wrong.")
        )
        assert reply == "The answer is 8"

    def test_unknown_prompt_is_parse_error(self):
        with pytest.raises(ParseError):
            scripted().complete("", "tell me a joke")


class TestGenerateCorpus:
    def test_distinct_texts_with_gold(self):
        seeds = generate_arithmetic_corpus(200, rng_seed=0)
        assert len({s.text for s in seeds}) == 200
        for seed in seeds:
            assert evaluate_expression(seed.text) == int(seed.gold_answer)
            assert seed.coord.level == 0 and seed.coord.variant == 0

    def test_deterministic(self):
        a = generate_arithmetic_corpus(50, rng_seed=1)
        b = generate_arithmetic_corpus(50, rng_seed=1)
        assert a == b


def completion_response(text):
    return httpx.Response(
        200,
        json={"choices": [{"message": {"content": text}}]},
    )


class TestRemoteBackend:
    def _backend(self, handler, monkeypatch, max_attempts=5):
        monkeypatch.setenv("TEST_API_KEY", "secret")
        return RemoteBackend(
            base_url="https://llm.example/v1",
            model="test-model",
            api_key_env="TEST_API_KEY",
            max_attempts=max_attempts,
            backoff_base=0.0,
            transport=httpx.MockTransport(handler),
        )

    def test_missing_api_key_env(self, monkeypatch):
        monkeypatch.delenv("NOPE_KEY", raising=False)
        with pytest.raises(ValueError, match="NOPE_KEY"):
            RemoteBackend("https://x", "m", api_key_env="NOPE_KEY")

    def test_success(self, monkeypatch):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["body"] = json.loads(request.content)
            seen["auth"] = request.headers.get("Authorization")
            return completion_response("hello")

        backend = self._backend(handler, monkeypatch)
        assert backend.complete("sys", "user", temperature=0.5) == "hello"
        assert seen["url"].endswith("/chat/completions")
        assert seen["auth"] == "Bearer secret"
        assert seen["body"]["messages"][0] == {"role": "system", "content": "sys"}
        assert seen["body"]["temperature"] == 0.5

    def test_retries_429_then_succeeds(self, monkeypatch):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(429, text="slow down")
            return completion_response("ok")

        backend = self._backend(handler, monkeypatch)
        assert backend.complete("s", "u") == "ok"
        assert calls["n"] == 3

    def test_exhausted_retries_raise_backend_error(self, monkeypatch):
        def handler(request):
            return httpx.Response(503, text="down")

        backend = self._backend(handler, monkeypatch, max_attempts=3)
        with pytest.raises(BackendError):
            backend.complete("s", "u")

    def test_client_error_is_not_retried(self, monkeypatch):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(400, text="bad request")

        backend = self._backend(handler, monkeypatch)
        with pytest.raises(BackendError):
            backend.complete("s", "u")
        assert calls["n"] == 1

    def test_whitespace_reply_is_parse_error(self, monkeypatch):
        backend = self._backend(
            lambda request: completion_response("   \n"), monkeypatch
        )
        with pytest.raises(ParseError):
            backend.complete("s", "u")


class TestBuildBackend:
    def test_scripted(self):
        backend = build_backend(
            {"kind": "scripted", "error_rate": 0.5, "stubborn": True}, rng_seed=3
        )
        assert isinstance(backend, ScriptedBackend)
        assert backend.error_rate == 0.5
        assert backend.stubborn
        assert backend.rng_seed == 3

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_backend({"kind": "quantum"})
