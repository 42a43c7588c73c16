"""Chat-completion gateway over an OpenAI-compatible HTTP server or a scripted fixture."""
from __future__ import annotations

import fnmatch
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import requests
import yaml

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_TEMPERATURE = 0.35


class GatewayError(Exception):
    """Base class for backend failures."""


class TimeoutExceeded(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class BackendUnavailable(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class MalformedBackendReply(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call.

    ``temperature=None`` means "leave it to the server"; ``max_tokens=None``
    means no limit is sent.
    """

    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float | None = DEFAULT_TEMPERATURE
    max_tokens: int | None = None
    request_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        for i, msg in enumerate(self.messages):
            if msg.role == "system" and i != 0:
                raise ValueError("system message may only appear at position 0")
        if self.temperature is not None and not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def system(self) -> str | None:
        first = self.messages[0]
        return first.content if first.role == "system" else None

    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    backend_latency: float
    attempt_count: int


@dataclass(frozen=True)
class BackendSpec:
    """Static description of a backend, as it appears in an experiment config.

    ``script`` for the scripted kind maps a tag (or fnmatch pattern) to either
    a list of replies consumed FIFO, or a single string replayed forever.
    The marker ``{tag}`` inside a reply is replaced by the request tag.
    """

    name: str
    kind: str
    model_id: str = "scripted"
    endpoint: str | None = None
    script: Mapping[str, Any] | None = None
    timeout: float = 120.0
    retry_budget: int = 2
    temperature: float | None = DEFAULT_TEMPERATURE
    api_key: str | None = None
    delay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("http", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError(f"http backend {self.name!r} requires an endpoint")
        if self.kind == "scripted" and self.script is None:
            raise ValueError(f"scripted backend {self.name!r} requires a script")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be non-negative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def load_script(path: str | Path) -> dict[str, Any]:
    """Read a scripted-backend fixture (YAML or JSON mapping of tag -> replies)."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: script must be a mapping of tag to replies")
    return data


RequestObserver = Callable[[ChatRequest], None]


class Backend:
    """Live handle on a backend; build one with :func:`open_backend`."""

    def __init__(self, spec: BackendSpec, observer: RequestObserver | None = None):
        self.spec = spec
        self.observer = observer

    def complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def healthcheck(self) -> dict[str, Any]:
        raise NotImplementedError

    def _observe(self, request: ChatRequest) -> None:
        if self.observer is not None:
            self.observer(request)


class ScriptedBackend(Backend):
    def __init__(self, spec: BackendSpec, observer: RequestObserver | None = None):
        super().__init__(spec, observer)
        self._lock = threading.Lock()
        self._queues: dict[str, deque[str]] = {}
        self._constant: dict[str, str] = {}
        for key, value in (spec.script or {}).items():
            if isinstance(value, str):
                self._constant[key] = value
            elif isinstance(value, Sequence):
                self._queues[key] = deque(str(v) for v in value)
            else:
                raise ValueError(f"script entry {key!r} must be a string or list")
        self._keys = list((spec.script or {}).keys())

    def _resolve_key(self, tag: str) -> str | None:
        if tag in self._queues or tag in self._constant:
            return tag
        for key in self._keys:
            if fnmatch.fnmatchcase(tag, key):
                return key
        return None

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._observe(request)
        start = time.perf_counter()
        if self.spec.delay:
            time.sleep(self.spec.delay)
        tag = request.request_tag
        with self._lock:
            key = self._resolve_key(tag)
            if key is None:
                raise ScriptExhausted(f"no scripted reply for tag {tag!r}")
            if key in self._constant:
                reply = self._constant[key]
            else:
                queue = self._queues[key]
                if not queue:
                    raise ScriptExhausted(f"script for {key!r} exhausted at tag {tag!r}")
                reply = queue.popleft()
        reply = reply.replace("{tag}", tag)
        if not reply.strip():
            raise MalformedBackendReply(f"empty scripted reply for tag {tag!r}")
        return ChatResponse(reply, time.perf_counter() - start, 1)

    def healthcheck(self) -> dict[str, Any]:
        return {"backend": self.spec.name, "kind": "scripted", "reachable": True,
                "model_available": True, "models": [self.spec.model_id], "error": None}


class HttpBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client with timeout and bounded retries."""

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.spec.api_key:
            headers["Authorization"] = f"Bearer {self.spec.api_key}"
        return headers

    def _url(self, route: str) -> str:
        return f"{self.spec.endpoint.rstrip('/')}/{route}"

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._observe(request)
        payload: dict[str, Any] = {
            "model": request.model_id,
            "messages": [m.to_dict() for m in request.messages],
            "stream": False,
        }
        if request.temperature is not None:
            payload["temperature"] = request.temperature
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens

        max_attempts = self.spec.retry_budget + 1
        last_error: Exception | None = None
        timed_out = False
        for attempt in range(1, max_attempts + 1):
            start = time.perf_counter()
            # a fresh session per attempt so a stalled keep-alive socket is not reused
            with requests.Session() as session:
                try:
                    resp = session.post(self._url("chat/completions"), json=payload,
                                        headers=self._headers(), timeout=self.spec.timeout)
                except requests.Timeout as exc:
                    last_error, timed_out = exc, True
                    log.warning("%s: attempt %d/%d timed out (%s)", self.spec.name,
                                attempt, max_attempts, request.request_tag)
                    continue
                except requests.ConnectionError as exc:
                    last_error, timed_out = exc, False
                    log.warning("%s: attempt %d/%d connection error: %s", self.spec.name,
                                attempt, max_attempts, exc)
                    continue
            latency = time.perf_counter() - start
            if resp.status_code >= 500:
                last_error = GatewayError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                timed_out = False
                continue
            if resp.status_code >= 400:
                raise MalformedBackendReply(f"HTTP {resp.status_code}: {resp.text[:300]}")
            return ChatResponse(_extract_content(resp), latency, attempt)

        if timed_out:
            raise TimeoutExceeded(
                f"{self.spec.name}: no reply within {self.spec.timeout}s after "
                f"{max_attempts} attempts", max_attempts)
        raise BackendUnavailable(
            f"{self.spec.name}: failed after {max_attempts} attempts: {last_error}", max_attempts)

    def healthcheck(self) -> dict[str, Any]:
        report: dict[str, Any] = {"backend": self.spec.name, "kind": "http", "reachable": False,
                                  "model_available": False, "models": [], "error": None}
        try:
            resp = requests.get(self._url("models"), headers=self._headers(),
                                timeout=self.spec.timeout)
        except requests.RequestException as exc:
            report["error"] = str(exc)
            return report
        report["reachable"] = True
        try:
            models = [item["id"] for item in resp.json().get("data", [])]
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            report["error"] = f"unexpected model list: {exc}"
            return report
        report["models"] = models
        # servers often report tags like "llama3.2:latest"
        report["model_available"] = any(
            m == self.spec.model_id or m.split(":")[0] == self.spec.model_id for m in models)
        return report


def _extract_content(resp: requests.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedBackendReply(f"not a chat completion: {resp.text[:300]!r}") from exc
    if not isinstance(content, str) or not content.strip():
        raise MalformedBackendReply("chat completion has empty content")
    return content


def open_backend(spec: BackendSpec, observer: RequestObserver | None = None) -> Backend:
    if spec.kind == "scripted":
        return ScriptedBackend(spec, observer)
    return HttpBackend(spec, observer)


def complete_chat(backend: Backend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request)


def healthcheck(backend: Backend) -> dict[str, Any]:
    return backend.healthcheck()


def dump_request(request: ChatRequest) -> str:
    return json.dumps({"tag": request.request_tag, "model": request.model_id,
                       "messages": [m.to_dict() for m in request.messages]})
