"""Provider-agnostic chat-completion access.

All pipeline roles run at temperature 0; the gateway enforces that at the
boundary, applies bounded exponential-backoff retries for transient provider
failures, and caps in-flight requests with a per-provider semaphore.
Deterministic providers (scripted fixtures and the corpus oracle in
``reference``) plug in through the same ``send()`` surface as the HTTP
client, which is what makes offline runs bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .errors import ConfigError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

ROLE_TAGS = ("planner", "reader", "normalizer", "coder", "synthesizer", "judge")

FALLBACK_REPLY = "UNMATCHED_PROMPT"


@dataclass(frozen=True)
class ChatRequest:
    role_tag: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_output: int = 4096

    def __post_init__(self):
        if self.role_tag not in ROLE_TAGS:
            raise ConfigError(f"unknown role_tag {self.role_tag!r}")
        if self.max_output <= 0:
            raise ConfigError("max_output must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider_id: str
    latency_ms: int
    attempt: int


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model_name: str = ""
    auth_env_var: str = ""
    max_retries: int = 2
    backoff_base_ms: int = 50
    parallelism_limit: int = 8

    def __post_init__(self):
        if self.parallelism_limit < 1:
            raise ConfigError("parallelism_limit must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")
        if self.backoff_base_ms <= 0:
            raise ConfigError("backoff_base_ms must be positive")


class Provider(Protocol):
    provider_id: str

    def send(self, request: ChatRequest) -> str: ...


class ScriptedProvider:
    """Deterministic provider: first matcher contained in the prompt wins."""

    def __init__(self, script: list[tuple[str, str]], fallback_reply: str = FALLBACK_REPLY):
        self.script = list(script)
        self.fallback_reply = fallback_reply
        self.provider_id = "scripted"

    def send(self, request: ChatRequest) -> str:
        for matcher, reply in self.script:
            if matcher in request.user_prompt:
                return reply
        return self.fallback_reply


def scripted_provider(
    script: list[tuple[str, str]], fallback_reply: str = FALLBACK_REPLY
) -> ScriptedProvider:
    return ScriptedProvider(script, fallback_reply)


def load_script_fixture(path: str | Path) -> list[tuple[str, str]]:
    """Read a fixture file of matcher/reply pairs: [{"match", "reply"}, ...]."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(entry["match"], entry["reply"]) for entry in payload]


class HttpChatProvider:
    """Minimal chat-completions HTTP client (system + user messages)."""

    RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})
    TIMEOUT_S = (10, 180)  # connect, read

    def __init__(self, config: ProviderConfig, session: requests.Session | None = None):
        if not config.endpoint:
            raise ConfigError("HttpChatProvider requires an endpoint URL")
        self.config = config
        self.provider_id = config.model_name or config.endpoint
        self._session = session or requests.Session()

    def send(self, request: ChatRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var)
            if not token:
                raise ProtocolError(
                    f"auth env var {self.config.auth_env_var} is not set", request.role_tag
                )
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }
        try:
            resp = self._session.post(
                self.config.endpoint, json=payload, headers=headers, timeout=self.TIMEOUT_S
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransportError(f"transport failure: {exc}", request.role_tag) from exc
        if resp.status_code in self.RETRYABLE_STATUSES:
            raise TransportError(f"retryable HTTP status {resp.status_code}", request.role_tag)
        if resp.status_code != 200:
            raise ProtocolError(f"HTTP status {resp.status_code}: {resp.text[:500]}", request.role_tag)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion payload: {exc}", request.role_tag) from exc


class Gateway:
    """Thread-safe front door for one provider.

    Enforces temperature 0, restricts concurrency to the provider's
    parallelism limit, and retries transient failures with exponential
    backoff. Shareable across concurrent callers.
    """

    def __init__(self, provider: Provider, config: ProviderConfig | None = None):
        self.provider = provider
        self.config = config or ProviderConfig()
        self._semaphore = threading.Semaphore(self.config.parallelism_limit)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.temperature != 0:
            raise ProtocolError(
                f"temperature must be 0 for all pipeline roles, got {request.temperature}",
                request.role_tag,
            )
        attempts = self.config.max_retries + 1
        start = time.monotonic()
        last_error: TransportError | None = None
        for attempt in range(1, attempts + 1):
            with self._semaphore:
                try:
                    text = self.provider.send(request)
                except TransportError as exc:
                    exc.role_tag = exc.role_tag or request.role_tag
                    last_error = exc
                    logger.warning(
                        "transient failure for role=%s attempt=%d/%d: %s",
                        request.role_tag, attempt, attempts, exc,
                    )
                except ProtocolError as exc:
                    exc.role_tag = exc.role_tag or request.role_tag
                    raise
                else:
                    latency_ms = int((time.monotonic() - start) * 1000)
                    return ChatResponse(
                        text=text,
                        provider_id=self.provider.provider_id,
                        latency_ms=latency_ms,
                        attempt=attempt,
                    )
            if attempt < attempts:
                time.sleep(self.config.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
        raise TransportError(
            f"exhausted {self.config.max_retries} retries for role {request.role_tag}: {last_error}",
            request.role_tag,
        )
