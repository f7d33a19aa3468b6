"""Completion providers: HTTP chat-completions, scripted mock, replay cache.

All providers expose ``complete(CompletionRequest) -> CompletionResponse``.
Token counts fall back to whitespace-token counts when a provider reports no
usage; that number is an approximation and is never compared to billing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import (
    AgentGridError,
    CacheCorruption,
    CacheMiss,
    ProviderUnavailable,
    UnscriptedPrompt,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "AGENT_LLM_API_KEY"
MAX_TOKENS_CAP = 8192


def digest(text: str) -> str:
    """64-bit hex digest used for prompts and completions in trajectories."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature outside [0, 2]")
        if not 1 <= self.max_tokens <= MAX_TOKENS_CAP:
            raise ValueError(f"max_tokens outside [1, {MAX_TOKENS_CAP}]")

    def cache_key(self) -> str:
        payload = json.dumps(
            [self.prompt, self.temperature, self.max_tokens, self.seed],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    tokens_in: int
    tokens_out: int
    provider_id: str

    def __post_init__(self):
        if self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("token counts must be nonnegative")


class Provider(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


def ask(llm: Provider, prompt: str, temperature: float = 0.0, seed: int | None = None,
        max_tokens: int = 1024) -> CompletionResponse:
    return llm.complete(CompletionRequest(prompt, temperature, max_tokens, seed))


class HTTPBackend:
    """POSTs a single-user-message chat-completions body to ``endpoint``."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 retries: int = 3, backoff: float = 0.5, timeout: float = 60.0,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep

    def _body(self, req: CompletionRequest) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        return body

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        request = urllib.request.Request(
            self.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST"
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        body = self._body(req)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                payload = self._post(body)
                break
            except urllib.error.HTTPError as exc:
                if exc.code < 500:
                    raise ProviderUnavailable(f"HTTP {exc.code} from {self.endpoint}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            if attempt < self.retries:
                delay = self.backoff * (2 ** attempt)
                log.warning("completion attempt %d failed (%s); retrying in %.2fs", attempt + 1, last, delay)
                self._sleep(delay)
        else:
            raise ProviderUnavailable(f"provider unavailable after {self.retries} retries: {last}")

        try:
            text = payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed completion payload: {payload!r}") from exc
        usage = payload.get("usage") or {}
        tokens_in = usage.get("prompt_tokens")
        tokens_out = usage.get("completion_tokens")
        return CompletionResponse(
            text=text,
            tokens_in=int(tokens_in) if tokens_in is not None else count_tokens(req.prompt),
            tokens_out=int(tokens_out) if tokens_out is not None else count_tokens(text),
            provider_id=f"http:{self.model}",
        )


@dataclass
class MockRule:
    """``pattern`` is searched in the prompt; responses are used in sequence.

    Once the sequence is exhausted the last response repeats. Responses may
    reference named regex groups as ``$name``. ``responder`` (Python API only)
    computes the reply from the match instead.
    """

    pattern: str
    responses: list[str] = field(default_factory=list)
    responder: Callable[[re.Match, str], str] | None = None
    calls: int = 0

    def __post_init__(self):
        self._regex = re.compile(self.pattern, re.DOTALL)
        if not self.responses and self.responder is None:
            raise ValueError(f"rule {self.pattern!r} has no responses")

    def match(self, prompt: str) -> re.Match | None:
        return self._regex.search(prompt)

    def reply(self, m: re.Match, prompt: str) -> str:
        index = self.calls
        self.calls += 1
        if self.responder is not None:
            return self.responder(m, prompt)
        template = self.responses[min(index, len(self.responses) - 1)]
        groups = {k: v for k, v in m.groupdict().items() if v is not None}
        return string.Template(template).safe_substitute(groups)


class MockBackend:
    """Deterministic scripted provider: first matching rule wins."""

    def __init__(self, rules: list[MockRule] | None = None, default: str | None = "",
                 strict: bool = False):
        self.rules = list(rules or [])
        self.default = default
        self.strict = strict
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls += 1
            for rule in self.rules:
                m = rule.match(req.prompt)
                if m is not None:
                    text = rule.reply(m, req.prompt)
                    break
            else:
                if self.strict or self.default is None:
                    raise UnscriptedPrompt(digest(req.prompt))
                text = self.default
        return CompletionResponse(text, count_tokens(req.prompt), count_tokens(text), "mock")

    @classmethod
    def from_script(cls, doc: dict) -> "MockBackend":
        rules = [MockRule(r["pattern"], list(r["responses"])) for r in doc.get("rules", [])]
        return cls(rules, default=doc.get("default", ""), strict=bool(doc.get("strict", False)))

    @classmethod
    def load(cls, path: str | Path) -> "MockBackend":
        return cls.from_script(json.loads(Path(path).read_text(encoding="utf-8")))


class ReplayCache:
    """Content-addressed record/replay wrapper around another provider.

    With ``replay_only`` a miss raises :class:`CacheMiss` instead of calling
    the inner provider.
    """

    def __init__(self, inner: Provider | None, path: str | Path, replay_only: bool = False):
        if inner is None and not replay_only:
            raise ValueError("a recording cache needs an inner provider")
        self.inner = inner
        self.path = Path(path)
        self.replay_only = replay_only
        self.inner_calls = 0
        self.hits = 0
        self._lock = threading.Lock()
        self._entries: dict[str, CompletionResponse] = {}
        self._load()

    def _load(self):
        if not self.path.exists():
            return
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                    self._entries[doc["key"]] = CompletionResponse(
                        doc["text"], int(doc["tokens_in"]), int(doc["tokens_out"]), "replay"
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    raise CacheCorruption(lineno, str(exc)) from exc

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        key = req.cache_key()
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None:
                self.hits += 1
                return hit
            if self.replay_only:
                raise CacheMiss(key)
            resp = self.inner.complete(req)
            self.inner_calls += 1
            doc = {
                "key": key,
                "prompt": req.prompt,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
                "seed": req.seed,
                "text": resp.text,
                "tokens_in": resp.tokens_in,
                "tokens_out": resp.tokens_out,
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
                fh.flush()
            stored = CompletionResponse(resp.text, resp.tokens_in, resp.tokens_out, "replay")
            self._entries[key] = stored
            return stored


def with_replay_cache(inner: Provider | None, cache_file: str | Path, replay_only: bool = False) -> ReplayCache:
    return ReplayCache(inner, cache_file, replay_only=replay_only)


class Metered:
    """Token accountant: wraps a provider and logs every exchange."""

    def __init__(self, inner: Provider):
        self.inner = inner
        self.log: list[tuple[CompletionRequest, CompletionResponse]] = []
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        resp = self.inner.complete(req)
        with self._lock:
            self.log.append((req, resp))
        return resp

    @property
    def calls(self) -> int:
        return len(self.log)

    @property
    def tokens_in(self) -> int:
        return sum(r.tokens_in for _, r in self.log)

    @property
    def tokens_out(self) -> int:
        return sum(r.tokens_out for _, r in self.log)

    @property
    def total_tokens(self) -> int:
        return self.tokens_in + self.tokens_out

    def mark(self) -> int:
        return len(self.log)

    def since(self, mark: int) -> list[tuple[CompletionRequest, CompletionResponse]]:
        return self.log[mark:]


def build_provider(backend: str, *, endpoint: str | None = None, model: str | None = None,
                   mock_script: str | Path | None = None, mock: MockBackend | None = None,
                   cache: str | Path | None = None) -> Provider:
    """Construct a provider from config keys (backend in {http, mock, replay})."""
    if backend == "http":
        if not endpoint or not model:
            raise AgentGridError("http backend needs an endpoint and a model name")
        inner: Provider | None = HTTPBackend(endpoint, model)
    elif backend == "mock":
        inner = MockBackend.load(mock_script) if mock_script else (mock or MockBackend())
    elif backend == "replay":
        if not cache:
            raise AgentGridError("replay backend needs a cache file")
        return ReplayCache(None, cache, replay_only=True)
    else:
        raise AgentGridError(f"unknown llm backend {backend!r}")
    if cache:
        return ReplayCache(inner, cache)
    return inner
