import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentgrid.errors import CacheCorruption, CacheMiss, ProviderUnavailable, UnscriptedPrompt
from agentgrid.llm import (
    CompletionRequest,
    HTTPBackend,
    Metered,
    MockBackend,
    MockRule,
    ReplayCache,
    ask,
    build_provider,
    digest,
    with_replay_cache,
)

from conftest import Recorder


class TestMock:
    def test_rule_match_and_token_count(self):
        llm = MockBackend([MockRule("plan", ["1. a\n2. b"])])
        resp = ask(llm, "please plan this")
        assert resp.text == "1. a\n2. b"
        assert resp.tokens_out == 4

    def test_strict_unscripted(self):
        with pytest.raises(UnscriptedPrompt) as info:
            ask(MockBackend(strict=True), "weather?")
        assert digest("weather?") in str(info.value)

    def test_default_reply(self):
        assert ask(MockBackend(default="meh"), "anything").text == "meh"

    def test_sequenced_responses_repeat_last(self):
        llm = MockBackend([MockRule("q", ["one", "two"])])
        assert [ask(llm, "q").text for _ in range(3)] == ["one", "two", "two"]

    def test_first_rule_wins_and_groups(self):
        llm = MockBackend([MockRule(r"press (?P<c>\w+)", ["ok $c"]), MockRule("press", ["never"])])
        assert ask(llm, "press red").text == "ok red"

    def test_script_document(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"strict": True, "rules": [{"pattern": "hi", "responses": ["hello"]}]}))
        llm = MockBackend.load(path)
        assert ask(llm, "hi there").text == "hello"
        with pytest.raises(UnscriptedPrompt):
            ask(llm, "bye")


class TestRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            CompletionRequest("", 0.0, 10)
        with pytest.raises(ValueError):
            CompletionRequest("x", 2.5, 10)
        with pytest.raises(ValueError):
            CompletionRequest("x", 0.0, 9000)

    @settings(max_examples=50, deadline=None)
    @given(st.text(min_size=1, max_size=20), st.floats(0, 2), st.integers(1, 8192),
           st.one_of(st.none(), st.integers(0, 100)))
    def test_key_depends_on_every_field(self, prompt, temperature, max_tokens, seed):
        base = CompletionRequest(prompt, temperature, max_tokens, seed)
        variants = [
            CompletionRequest(prompt + "!", temperature, max_tokens, seed),
            CompletionRequest(prompt, 1.0 if temperature != 1.0 else 0.5, max_tokens, seed),
            CompletionRequest(prompt, temperature, max_tokens % 8192 + 1, seed),
            CompletionRequest(prompt, temperature, max_tokens, None if seed is not None else 1),
        ]
        assert all(v.cache_key() != base.cache_key() for v in variants)


class TestReplayCache:
    def test_hit_skips_inner(self, tmp_path):
        inner = Recorder(["answer"])
        cache = with_replay_cache(inner, tmp_path / "c.jsonl")
        a = ask(cache, "q")
        b = ask(cache, "q")
        assert a.text == b.text == "answer"
        assert inner.calls == 1 and cache.hits == 1

    def test_persisted_and_replay_only(self, tmp_path):
        path = tmp_path / "c.jsonl"
        ask(ReplayCache(Recorder(["x"]), path), "q", seed=3)
        line = json.loads(path.read_text().splitlines()[0])
        assert set(line) == {"key", "prompt", "temperature", "max_tokens", "seed", "text", "tokens_in", "tokens_out"}
        replay = ReplayCache(None, path, replay_only=True)
        assert ask(replay, "q", seed=3).text == "x"
        with pytest.raises(CacheMiss):
            ask(replay, "novel")

    def test_corruption_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        ask(ReplayCache(Recorder(["x"]), path), "q")
        with path.open("a") as fh:
            fh.write("{not json\n")
        with pytest.raises(CacheCorruption, match="line 2"):
            ReplayCache(None, path, replay_only=True)


class TestMetered:
    def test_totals_are_sums(self):
        meter = Metered(MockBackend(default="a b c"))
        for p in ("one", "two words", "three little words"):
            ask(meter, p)
        assert meter.tokens_in == 1 + 2 + 3
        assert meter.tokens_out == 9
        assert meter.total_tokens == sum(r.tokens_in + r.tokens_out for _, r in meter.log)


class _Stub(BaseHTTPRequestHandler):
    script: list = []
    bodies: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).bodies.append((body, self.headers.get("Authorization")))
        status, payload = type(self).script.pop(0)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    _Stub.script, _Stub.bodies = [], []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions", _Stub
    server.shutdown()


def _ok(text, usage=True):
    doc = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        doc["usage"] = {"prompt_tokens": 11, "completion_tokens": 5}
    return 200, doc


class TestHTTP:
    def test_wire_contract(self, stub):
        url, handler = stub
        handler.script = [_ok("stub payload")]
        backend = HTTPBackend(url, "m1", api_key="secret")
        resp = ask(backend, "hello", temperature=0.3, max_tokens=64)
        assert resp.text == "stub payload"
        assert (resp.tokens_in, resp.tokens_out) == (11, 5)
        body, auth = handler.bodies[0]
        assert body == {"model": "m1", "messages": [{"role": "user", "content": "hello"}],
                        "temperature": 0.3, "max_tokens": 64}
        assert auth == "Bearer secret"

    def test_usage_fallback(self, stub):
        url, handler = stub
        handler.script = [_ok("three word reply", usage=False)]
        resp = ask(HTTPBackend(url, "m", api_key=""), "a b")
        assert (resp.tokens_in, resp.tokens_out) == (2, 3)

    def test_retries_5xx(self, stub):
        url, handler = stub
        handler.script = [(500, {}), (503, {}), _ok("finally")]
        delays = []
        backend = HTTPBackend(url, "m", api_key="", sleep=delays.append, backoff=0.1)
        assert ask(backend, "x").text == "finally"
        assert delays == [0.1, 0.2]

    def test_exhausted(self, stub):
        url, handler = stub
        handler.script = [(500, {})] * 4
        backend = HTTPBackend(url, "m", api_key="", sleep=lambda s: None)
        with pytest.raises(ProviderUnavailable):
            ask(backend, "x")
        assert len(handler.bodies) == 4

    def test_no_retry_on_4xx(self, stub):
        url, handler = stub
        handler.script = [(400, {"error": "bad"})]
        with pytest.raises(ProviderUnavailable):
            ask(HTTPBackend(url, "m", api_key="", sleep=lambda s: None), "x")
        assert len(handler.bodies) == 1

    def test_api_key_from_env(self, monkeypatch):
        monkeypatch.setenv("AGENT_LLM_API_KEY", "from-env")
        assert HTTPBackend("http://x", "m").api_key == "from-env"


def test_build_provider(tmp_path):
    assert isinstance(build_provider("mock"), MockBackend)
    assert isinstance(build_provider("mock", cache=tmp_path / "c.jsonl"), ReplayCache)
    assert build_provider("replay", cache=tmp_path / "c.jsonl").replay_only
    with pytest.raises(Exception):
        build_provider("carrier-pigeon")
