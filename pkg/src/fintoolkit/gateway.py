"""Uniform client for chat and embedding endpoints, with a scripted mock backend.

Every agent, judge, and remote encoder in the pipeline talks through this one
client. Endpoints speak the OpenAI-compatible HTTP protocol; per-role endpoint
profiles carry model name, auth environment variable, retry policy, and rate
limit. The mock backend replays scripted transcripts so the entire pipeline
runs offline and deterministically.

Secrets come only from named environment variables; profile files never hold
keys inline.
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

from .index import EmbeddingVector
from .jsonl import read_jsonl

logger = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    pass


class GatewayTimeout(GatewayError):
    pass


class GatewayAuthError(GatewayError):
    pass


class GatewayRateLimited(GatewayError):
    pass


class ExhaustedRetries(GatewayError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class StructuredOutputError(GatewayError):
    """The endpoint never produced parseable structured output."""


class MockMiss(GatewayError):
    """No transcript entry matched a mock request."""


_RETRYABLE = (GatewayTimeout, GatewayRateLimited)


@dataclass(frozen=True)
class EndpointProfile:
    id: str
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    max_attempts: int = 3
    backoff: float = 0.5
    rate_limit_rps: float | None = None
    temperature: float = 0.0
    max_tokens: int = 4096
    mock_transcript: str | None = None

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass
class GatewayRequest:
    profile: str
    messages: list[dict]
    temperature: float | None = None
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class Backend(Protocol):
    def chat(self, profile: EndpointProfile, messages: list[dict],
             temperature: float, max_tokens: int) -> tuple[str, dict]: ...

    def embeddings(self, profile: EndpointProfile, texts: list[str]) -> list[list[float]]: ...


class HttpBackend:
    """OpenAI-compatible HTTP transport."""

    def __init__(self, timeout: float = 60.0):
        self.timeout = timeout

    def _headers(self, profile: EndpointProfile) -> dict:
        headers = {"Content-Type": "application/json"}
        if profile.api_key_env:
            key = os.environ.get(profile.api_key_env, "")
            if not key:
                raise GatewayAuthError(f"environment variable {profile.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, profile: EndpointProfile, route: str, payload: dict) -> dict:
        url = profile.base_url.rstrip("/") + route
        try:
            response = requests.post(url, json=payload, headers=self._headers(profile),
                                     timeout=self.timeout)
        except requests.Timeout as exc:
            raise GatewayTimeout(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise GatewayTimeout(f"connection failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise GatewayAuthError(f"{response.status_code}: {response.text[:200]}")
        if response.status_code == 429:
            raise GatewayRateLimited(response.text[:200])
        if response.status_code >= 500:
            raise GatewayTimeout(f"{response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise GatewayError(f"{response.status_code}: {response.text[:200]}")
        return response.json()

    def chat(self, profile: EndpointProfile, messages: list[dict],
             temperature: float, max_tokens: int) -> tuple[str, dict]:
        payload = {
            "model": profile.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        doc = self._post(profile, "/chat/completions", payload)
        try:
            text = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc
        return text or "", doc.get("usage", {})

    def embeddings(self, profile: EndpointProfile, texts: list[str]) -> list[list[float]]:
        doc = self._post(profile, "/embeddings", {"model": profile.model, "input": texts})
        try:
            rows = sorted(doc["data"], key=lambda d: d["index"])
            return [row["embedding"] for row in rows]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {exc}") from exc


class MockBackend:
    """Scripted offline backend.

    Transcript entries are ``{"match": key, "response": text}`` rows; a request
    is answered by the first live entry whose match key is a substring of the
    concatenated message contents. ``"once": true`` entries are consumed after
    one use, which scripts sequential behavior (fail, fail, pass). An entry may
    carry ``"error": "timeout" | "rate_limited" | "auth"`` instead of a
    response, and ``"embedding"`` rows answer embedding requests.
    """

    def __init__(self, entries: list[dict] | None = None):
        self.entries = [dict(e) for e in (entries or [])]
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "MockBackend":
        return cls(list(read_jsonl(path)))

    def _pick(self, text: str, keys: tuple[str, ...]) -> dict:
        with self._lock:
            self.calls += 1
            for entry in self.entries:
                if entry.get("_consumed"):
                    continue
                if not any(k in entry for k in keys):
                    continue
                if entry.get("match", "") in text:
                    if entry.get("once"):
                        entry["_consumed"] = True
                    return entry
        raise MockMiss(f"no mock entry for {keys} matches request: {text[:120]!r}")

    @staticmethod
    def _raise_scripted(entry: dict) -> None:
        kind = entry.get("error")
        if kind == "timeout":
            raise GatewayTimeout("scripted timeout")
        if kind == "rate_limited":
            raise GatewayRateLimited("scripted rate limit")
        if kind == "auth":
            raise GatewayAuthError("scripted auth failure")
        if kind:
            raise GatewayError(f"scripted error: {kind}")

    def chat(self, profile: EndpointProfile, messages: list[dict],
             temperature: float, max_tokens: int) -> tuple[str, dict]:
        text = "\n".join(str(m.get("content", "")) for m in messages)
        entry = self._pick(text, ("response", "error"))
        self._raise_scripted(entry)
        return entry["response"], entry.get("usage", {})

    def embeddings(self, profile: EndpointProfile, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            entry = self._pick(text, ("embedding", "error"))
            self._raise_scripted(entry)
            out.append(list(entry["embedding"]))
        return out


class _TokenBucket:
    def __init__(self, rps: float):
        self.rps = rps
        self.capacity = max(1.0, rps)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rps)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rps
            time.sleep(wait)


class Gateway:
    """Profile-routed client with retries, rate limiting, and usage accounting."""

    def __init__(self, profiles: dict[str, EndpointProfile],
                 backends: dict[str, Backend] | None = None,
                 default_backend: Backend | None = None):
        self.profiles = dict(profiles)
        self.backends = dict(backends or {})
        self.default_backend = default_backend
        self.usage: dict[str, dict] = {}
        self._buckets: dict[str, _TokenBucket] = {}
        self._lock = threading.Lock()
        for pid, profile in self.profiles.items():
            if pid not in self.backends:
                if profile.mock_transcript:
                    self.backends[pid] = MockBackend.load(profile.mock_transcript)
                elif default_backend is not None:
                    self.backends[pid] = default_backend
                else:
                    self.backends[pid] = HttpBackend()
            if profile.rate_limit_rps:
                self._buckets[pid] = _TokenBucket(profile.rate_limit_rps)

    @classmethod
    def from_config(cls, path: str | Path, backends: dict[str, Backend] | None = None) -> "Gateway":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        profiles = {
            pid: EndpointProfile(id=pid, **cfg) for pid, cfg in doc.get("profiles", {}).items()
        }
        return cls(profiles, backends=backends)

    def _profile(self, pid: str) -> EndpointProfile:
        try:
            return self.profiles[pid]
        except KeyError:
            raise GatewayError(f"unknown endpoint profile {pid!r}") from None

    def _record_usage(self, pid: str, usage: dict) -> None:
        with self._lock:
            slot = self.usage.setdefault(pid, {"requests": 0, "prompt_tokens": 0, "completion_tokens": 0})
            slot["requests"] += 1
            slot["prompt_tokens"] += int(usage.get("prompt_tokens", 0) or 0)
            slot["completion_tokens"] += int(usage.get("completion_tokens", 0) or 0)

    def _with_retries(self, profile: EndpointProfile, fn):
        last: Exception | None = None
        for attempt in range(1, profile.max_attempts + 1):
            bucket = self._buckets.get(profile.id)
            if bucket is not None:
                bucket.acquire()
            try:
                return fn(), attempt
            except GatewayAuthError:
                raise
            except _RETRYABLE as exc:
                last = exc
                if attempt < profile.max_attempts and profile.backoff > 0:
                    time.sleep(profile.backoff * (2 ** (attempt - 1)))
                logger.warning("profile %s attempt %d/%d failed: %s",
                               profile.id, attempt, profile.max_attempts, exc)
        assert last is not None
        raise ExhaustedRetries(profile.max_attempts, last)

    def complete(self, req: GatewayRequest) -> str:
        """Chat completion with per-profile retries; returns the response text."""
        profile = self._profile(req.profile)
        backend = self.backends[profile.id]
        temperature = profile.temperature if req.temperature is None else req.temperature
        max_tokens = profile.max_tokens if req.max_tokens is None else req.max_tokens

        def call() -> str:
            text, usage = backend.chat(profile, req.messages, temperature, max_tokens)
            self._record_usage(profile.id, usage)
            return text

        text, _ = self._with_retries(profile, call)
        return text

    def complete_structured(self, req: GatewayRequest) -> dict:
        """Completion expected to be a JSON object; one automatic re-ask on parse failure."""
        text = self.complete(req)
        parsed = extract_json_object(text)
        if parsed is not None:
            return parsed
        retry = GatewayRequest(
            profile=req.profile,
            messages=req.messages
            + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": "Your previous reply was not valid JSON. "
                                            "Reply again with ONLY the JSON object."},
            ],
            temperature=req.temperature,
            max_tokens=req.max_tokens,
        )
        text2 = self.complete(retry)
        parsed = extract_json_object(text2)
        if parsed is None:
            raise StructuredOutputError(f"unparseable structured output: {text2[:200]!r}")
        return parsed

    def embed(self, texts: list[str], profile_id: str) -> list[EmbeddingVector]:
        """Order-preserving batch embedding with a consistent dimension."""
        if not texts:
            return []
        profile = self._profile(profile_id)
        backend = self.backends[profile.id]

        def call() -> list[list[float]]:
            rows = backend.embeddings(profile, texts)
            self._record_usage(profile.id, {})
            return rows

        rows, _ = self._with_retries(profile, call)
        if len(rows) != len(texts):
            raise GatewayError(f"embedding count mismatch: sent {len(texts)}, got {len(rows)}")
        vectors = [EmbeddingVector(tuple(row)) for row in rows]
        dims = {v.dim for v in vectors}
        if len(dims) > 1:
            raise GatewayError(f"inconsistent embedding dims in batch: {sorted(dims)}")
        return vectors


def extract_json_object(text: str) -> dict | None:
    """Best-effort extraction of the first JSON object from a model reply."""
    text = text.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
    try:
        doc = json.loads(text)
        if isinstance(doc, dict):
            return doc
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    end = text.rfind("}")
    if start != -1 and end > start:
        try:
            doc = json.loads(text[start : end + 1])
            if isinstance(doc, dict):
                return doc
        except json.JSONDecodeError:
            return None
    return None


class GatewayEncoder:
    """Adapter exposing a gateway embedding profile as an index encoder."""

    def __init__(self, gateway: Gateway, profile_id: str, dim: int):
        self.gateway = gateway
        self.profile_id = profile_id
        self.dim = dim
        model = gateway.profiles[profile_id].model or profile_id
        self.id = f"gateway:{model}:{dim}"

    def encode(self, text: str) -> EmbeddingVector:
        vector = self.gateway.embed([text], self.profile_id)[0]
        if vector.dim != self.dim:
            raise GatewayError(f"embedding dim {vector.dim} != configured {self.dim}")
        return vector
