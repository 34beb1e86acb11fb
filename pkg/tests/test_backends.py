import json
import socket

import httpx
import pytest

from llmq_vrp import env as E
from llmq_vrp.advisor import build_prompt
from llmq_vrp.backends import ChatCompletionsBackend, MockBackend, read_prompt
from llmq_vrp.errors import BackendUnavailable

from conftest import seeded


def _ok(content="[[1, 2]]"):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def _backend(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    kw.setdefault("sleep", lambda s: None)
    return ChatCompletionsBackend("some-model", base_url="http://llm.test/v1",
                                  client=client, **kw)


def test_request_shape_and_reply(tmp_path):
    seen = []

    def handler(req):
        seen.append(req)
        return _ok("hello")

    log = tmp_path / "advisor.jsonl"
    be = _backend(handler, api_key="tok", log_path=log)
    assert be.complete("prompt text") == "hello"
    req = seen[0]
    assert str(req.url) == "http://llm.test/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer tok"
    body = json.loads(req.content)
    assert body["model"] == "some-model"
    assert body["messages"] == [{"role": "user", "content": "prompt text"}]
    rec = json.loads(log.read_text())
    assert rec["prompt"] == "prompt text" and rec["reply"] == "hello"


def test_retries_then_succeeds():
    codes = iter([429, 503])
    sleeps = []

    def handler(req):
        code = next(codes, 200)
        return _ok() if code == 200 else httpx.Response(code)

    be = _backend(handler, retries=2, backoff=0.5, sleep=sleeps.append)
    assert be.complete("p") == "[[1, 2]]"
    assert sleeps == [0.5, 1.0]


def test_exhausted_retries_raise():
    calls = []

    def handler(req):
        calls.append(1)
        raise httpx.ConnectError("refused")

    with pytest.raises(BackendUnavailable):
        _backend(handler, retries=2).complete("p")
    assert len(calls) == 3


def test_client_error_not_retried():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(BackendUnavailable, match="401"):
        _backend(handler, retries=3).complete("p")
    assert len(calls) == 1


def test_malformed_body_is_unavailable():
    with pytest.raises(BackendUnavailable):
        _backend(lambda r: httpx.Response(200, json={"nope": 1}), retries=0).complete("p")


def test_env_defaults(monkeypatch):
    monkeypatch.setenv("LLMQ_API_BASE", "http://env.test/v2/")
    monkeypatch.setenv("LLMQ_API_KEY", "k")
    be = ChatCompletionsBackend("m", client=httpx.Client(transport=httpx.MockTransport(_ok)))
    assert be.base_url == "http://env.test/v2" and be.api_key == "k"


# -- mock ------------------------------------------------------------------

@pytest.fixture
def no_network(monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("network touched")
    monkeypatch.setattr(socket, "socket", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


def test_mock_is_deterministic_and_offline(no_network, tmp_path):
    inst = seeded(6, 3)
    prompt = build_prompt(E.reset(inst), inst)
    a = MockBackend(5, log_path=tmp_path / "a.jsonl").complete(prompt)
    b = MockBackend(5, log_path=tmp_path / "b.jsonl").complete(prompt)
    assert a == b
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_mock_reads_prompt_back():
    inst = seeded(6, 3)
    s = E.reset(inst)
    v = read_prompt(build_prompt(s, inst))
    assert v.pending == list(range(1, inst.n_nodes))
    assert v.capacity == inst.capacity and v.max_routes == inst.max_routes
    assert len(v.breaks) == len([b for b in inst.breaks])


def test_unknown_fault_rejected():
    with pytest.raises(ValueError):
        MockBackend(0, fault="typo")
