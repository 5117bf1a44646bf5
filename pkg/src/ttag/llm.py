"""LLM clients: a deterministic mock for offline runs and an HTTP client.

Every client bounds concurrent requests with a semaphore and retries
transient failures with exponential backoff. 4xx responses are not retried.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass

logger = logging.getLogger("ttag.llm")


class LlmError(Exception):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class TransportError(LlmError):
    """Retryable: network trouble or a 5xx from the provider."""


class ClientError(LlmError):
    """Not retryable: the request itself is bad (4xx)."""


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 30.0

    def delay(self, attempt: int) -> float:
        return min(self.backoff_base * (2 ** (attempt - 1)), self.backoff_cap)


@dataclass
class Completion:
    text: str
    tokens_in: int
    tokens_out: int
    attempts: int
    elapsed: float


class LlmClient:
    """Base client: bounded in-flight requests, retry loop, response cap.

    Subclasses implement _call_once(prompt) returning either the response
    text or (text, tokens_in, tokens_out) when the provider reports usage.
    """

    def __init__(self, max_in_flight: int = 8, retry: RetryPolicy | None = None,
                 response_cap: int = 8000):
        self.max_in_flight = max_in_flight
        self.retry = retry or RetryPolicy()
        self.response_cap = response_cap
        self.call_count = 0
        self.max_observed_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _call_once(self, prompt: str):
        raise NotImplementedError

    def complete(self, prompt: str) -> Completion:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        start = time.perf_counter()
        attempts = 0
        with self._gate:
            while True:
                attempts += 1
                with self._lock:
                    self.call_count += 1
                    self._in_flight += 1
                    self.max_observed_in_flight = max(
                        self.max_observed_in_flight, self._in_flight)
                try:
                    raw = self._call_once(prompt)
                except TransportError:
                    if attempts >= self.retry.max_attempts:
                        raise
                    time.sleep(self.retry.delay(attempts))
                    continue
                finally:
                    with self._lock:
                        self._in_flight -= 1
                break

        if isinstance(raw, tuple):
            text, tokens_in, tokens_out = raw
        else:
            text, tokens_in, tokens_out = raw, len(prompt.split()), None
        if len(text) > self.response_cap:
            logger.warning("response truncated from %d to %d chars",
                           len(text), self.response_cap)
            text = text[:self.response_cap]
        if tokens_out is None:
            tokens_out = len(text.split())
        return Completion(text, tokens_in, tokens_out, attempts,
                          time.perf_counter() - start)


_NODE_RE = re.compile(r"## Node\n(.*?)\n")
_DESC_RE = re.compile(r"## Descriptions\n(.*?)\n## ", re.S)
_LINE_RE = re.compile(r"- \[t=([^\]]+)\] with ([^:]*): (.*)")


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


class MockLlmClient(LlmClient):
    """Deterministic digest summarizer; no network, reproducible everywhere.

    Parses the prompt back into (node text, current time, history lines) and
    emits the dominant non-boilerplate tokens of the recent interactions.
    An optional artificial latency makes concurrency observable in tests.
    """

    def __init__(self, latency: float = 0.0, **kw):
        super().__init__(**kw)
        self.latency = latency

    def _call_once(self, prompt: str) -> str:
        if self.latency:
            time.sleep(self.latency)
        n_match = _NODE_RE.search(prompt)
        label = n_match.group(1).strip() if n_match else ""
        d_match = _DESC_RE.search(prompt)
        node_text = d_match.group(1).strip() if d_match else ""
        lines = _LINE_RE.findall(prompt)

        # the counterparty is part of what an interaction says about the
        # node, so partner names compete with content words for the digest
        line_tokens = [set(_tokenize(f"{nbr} {text}")) for _, nbr, text in lines]
        counts: dict[str, int] = {}
        for _, nbr, text in lines:
            for tok in _tokenize(f"{nbr} {text}"):
                counts[tok] = counts.get(tok, 0) + 1
        if len(lines) > 3:
            # boilerplate shows up in nearly every line; drop it from the digest
            cutoff = 0.8 * len(lines)
            counts = {t: c for t, c in counts.items()
                      if sum(t in s for s in line_tokens) < cutoff}
        top = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]]

        focus = " ".join(top) if top else "nothing notable"
        subject = label or "the node"
        # the static profile is already the chain's base entry, so the digest
        # spends its tokens on what changed; no timestamp either, since the
        # chain carries the time and a unique numeral would only pollute
        # bag-of-token embeddings
        return (f"status update on {subject}: recent activity across "
                f"{len(lines)} interactions emphasizes {focus}")


class HttpLlmClient(LlmClient):
    """OpenAI-style chat-completions client.

    The API key is read from the environment variable named by api_key_var;
    the key itself never lives in config files.
    """

    def __init__(self, base_url: str, model: str, api_key_var: str = "LLM_API_KEY",
                 timeout: float = 60.0, session=None, **kw):
        super().__init__(**kw)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_var = api_key_var
        self.timeout = timeout
        if session is None:
            import requests
            session = requests.Session()
        self.session = session

    def _call_once(self, prompt: str):
        import requests

        key = os.environ.get(self.api_key_var, "")
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions",
                json={"model": self.model,
                      "messages": [{"role": "user", "content": prompt}]},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}",
                                 status=resp.status_code)
        if resp.status_code >= 400:
            raise ClientError(f"client error {resp.status_code}: {resp.text[:200]}",
                              status=resp.status_code)
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"]
        usage = payload.get("usage") or {}
        tokens_in = usage.get("prompt_tokens", len(prompt.split()))
        tokens_out = usage.get("completion_tokens")
        return text, tokens_in, tokens_out


def make_client(kind: str, **kw) -> LlmClient:
    if kind == "mock":
        return MockLlmClient(**kw)
    if kind == "http":
        return HttpLlmClient(**kw)
    raise ValueError(f"unknown llm client kind {kind!r}")
