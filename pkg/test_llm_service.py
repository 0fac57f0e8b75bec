"""Tests for the chat client against the local mock endpoint"""

import hashlib

import pytest

from config import QueryConfig
from errors import (
    AuthError,
    InvalidInputError,
    MalformedResponseError,
    RequestRejectedError,
    RetriesExhaustedError,
)
from llm_service import MLLMClient, QueryJob, ResponseCache, batch_query, cache_key, parse_answer


def make_client(server, api_key="test-key", **overrides):
    settings = {"endpoint": server.base_url, "model": "mock-model", "backoff_base": 0.001, "max_attempts": 4}
    settings.update(overrides)
    return MLLMClient(QueryConfig(**settings), api_key=api_key)


def write_image(tmp_path, name, payload=b"\x89PNG fake"):
    path = tmp_path / name
    path.write_bytes(payload)
    return str(path)


def test_parse_answer_takes_last_marker():
    assert parse_answer("thinking...\nANSWER: 3\nno wait\nANSWER:  4 ") == ("4", False)


def test_parse_answer_falls_back_to_last_line():
    assert parse_answer("The room has\n\n2 chairs\n") == ("2 chairs", True)
    assert parse_answer("") == ("", True)


def test_query_returns_answer(mock_server):
    result = make_client(mock_server).query("How many?")
    assert result.answer == "A"
    assert result.attempts == 1
    assert result.usage["prompt_tokens"] == 10
    [body] = mock_server.state.requests
    assert body["model"] == "mock-model"
    assert body["messages"][0]["role"] == "user"
    assert body["messages"][0]["content"][0] == {"type": "text", "text": "How many?"}


def test_images_travel_in_the_same_turn(mock_server, tmp_path):
    mock_server.state.echo = True
    payload = b"pixels"
    result = make_client(mock_server).query("Describe", [write_image(tmp_path, "a.png", payload)])
    assert result.raw_text == "Describe\nIMAGE " + hashlib.sha256(payload).hexdigest()
    assert result.parse_warning
    url = mock_server.state.requests[0]["messages"][0]["content"][1]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")


def test_transient_failures_are_retried(mock_server):
    mock_server.state.push(503)
    mock_server.state.push(429)
    result = make_client(mock_server).query("q")
    assert result.attempts == 3
    assert mock_server.state.request_count == 3


def test_retries_exhausted(mock_server):
    for _ in range(4):
        mock_server.state.push(500)
    with pytest.raises(RetriesExhaustedError) as info:
        make_client(mock_server).query("q")
    assert info.value.attempts == 4
    assert mock_server.state.request_count == 4


def test_client_errors_fail_fast(mock_server):
    mock_server.state.push(400)
    with pytest.raises(RequestRejectedError):
        make_client(mock_server).query("q")
    assert mock_server.state.request_count == 1


def test_bad_key_fails_fast(mock_server):
    mock_server.state.api_key = "right-key"
    with pytest.raises(AuthError):
        make_client(mock_server, api_key="wrong-key").query("q")
    assert mock_server.state.hits == 1


def test_missing_key_env(monkeypatch):
    monkeypatch.delenv("GR3D_TEST_MISSING_KEY", raising=False)
    with pytest.raises(AuthError):
        MLLMClient(QueryConfig(api_key_env="GR3D_TEST_MISSING_KEY"))


def test_empty_choices_is_malformed(mock_server):
    mock_server.state.push(200, {"id": "x", "object": "chat.completion", "created": 0, "model": "m", "choices": []})
    with pytest.raises(MalformedResponseError):
        make_client(mock_server).query("q")


def test_too_many_images(mock_server, tmp_path):
    paths = [write_image(tmp_path, f"{k}.png") for k in range(3)]
    with pytest.raises(InvalidInputError):
        make_client(mock_server, max_images=2).query("q", paths)
    assert mock_server.state.request_count == 0


def test_extra_body_fields_are_sent(mock_server):
    make_client(mock_server, extra={"reasoning_effort": "low"}).query("q")
    assert mock_server.state.requests[0]["reasoning_effort"] == "low"


def test_cache_hit_skips_network(mock_server, tmp_path):
    client = make_client(mock_server)
    cache = ResponseCache(str(tmp_path / "cache"))
    image = write_image(tmp_path, "a.png")
    first = client.cached_query("q", [image], cache)
    second = client.cached_query("q", [image], cache)
    assert not first.cached and second.cached
    assert second.answer == first.answer
    assert mock_server.state.request_count == 1


def test_cache_key_covers_model_prompt_and_images():
    base = cache_key("m", "p", [b"1"])
    assert base == cache_key("m", "p", [b"1"])
    assert len({base, cache_key("n", "p", [b"1"]), cache_key("m", "q", [b"1"]), cache_key("m", "p", [b"2"])}) == 4


def test_batch_respects_concurrency_and_order(mock_server):
    mock_server.state.echo = True
    mock_server.state.delay = 0.2
    jobs = [QueryJob(f"job {k}\nANSWER: {k}", key=str(k)) for k in range(9)]
    results = batch_query(make_client(mock_server), jobs, limit=3)
    assert [r.result.answer for r in results] == [str(k) for k in range(9)]
    assert 1 < mock_server.state.max_in_flight <= 3


def test_batch_with_limit_one_is_sequential(mock_server):
    mock_server.state.echo = True
    mock_server.state.delay = 0.05
    jobs = [QueryJob(f"ANSWER: {k}", key=str(k)) for k in range(4)]
    results = batch_query(make_client(mock_server), jobs, limit=1)
    assert [r.result.answer for r in results] == ["0", "1", "2", "3"]
    assert mock_server.state.max_in_flight == 1
    assert mock_server.state.hits == 4


def test_batch_isolates_failures(mock_server, tmp_path):
    jobs = [QueryJob("a"), QueryJob("b", (str(tmp_path / "missing.png"),)), QueryJob("c")]
    results = batch_query(make_client(mock_server), jobs, limit=2)
    assert [r.ok for r in results] == [True, False, True]
    assert "MissingFileError" in results[1].error
