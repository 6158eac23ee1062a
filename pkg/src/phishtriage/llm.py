"""Client for OpenAI-compatible chat-completion endpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional

import httpx

from . import errors
from ._io import atomic_write_text
from .ingest import UniformRecord
from .prompt import (
    URL_SECTION_HEADER,
    ClassificationRequest,
    Verdict,
    build_request,
    parse_verdict,
    schema_instruction,
)

__all__ = [
    "ModelConfig",
    "ErrorInfo",
    "ClassificationOutcome",
    "RateLimiter",
    "ResponseCache",
    "classify_email",
    "classify_batch",
    "error_summary",
    "fit_to_budget",
    "build_payload",
    "BENCHMARK_MODELS",
    "outcomes_to_jsonl",
    "write_outcomes",
    "read_outcomes",
]

log = logging.getLogger(__name__)

# The four open models compared in the evaluation; identifiers vary by provider.
BENCHMARK_MODELS = ("llama-3.1-70b", "gemma2-9b", "llama-3-8b", "mistral-large-latest")

TRUNCATION_MARK = "[truncated]"


@dataclass(frozen=True)
class ModelConfig:
    name: str
    base_url: str = "http://localhost:8000/v1"
    credential_env: str = "PHISHTRIAGE_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = 1024
    rate_limit: float = 60.0  # requests per minute
    timeout: float = 60.0  # seconds
    max_retries: int = 3
    seed: Optional[int] = 0
    output_mode: str = "json_schema"  # json_schema | tool | prompt
    context_chars: int = 24_000
    backoff_base: float = 0.5
    backoff_max: float = 30.0

    def __post_init__(self):
        if not self.name:
            raise ValueError("model name is required")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be > 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.output_mode not in ("json_schema", "tool", "prompt"):
            raise ValueError(f"unknown output_mode {self.output_mode!r}")

    @property
    def endpoint(self) -> str:
        url = self.base_url.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"

    def credential(self) -> Optional[str]:
        return os.environ.get(self.credential_env) or None

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class ErrorInfo:
    kind: str
    message: str = ""

    @classmethod
    def of(cls, exc: BaseException) -> "ErrorInfo":
        return cls(type(exc).__name__, str(exc))


@dataclass(frozen=True)
class ClassificationOutcome:
    record_id: str
    verdict: Optional[Verdict] = None
    error: Optional[ErrorInfo] = None
    latency: float = 0.0
    attempts: int = 0
    payload: Optional[str] = None
    cached: bool = False

    def __post_init__(self):
        if (self.verdict is None) == (self.error is None):
            raise ValueError("exactly one of verdict/error must be set")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.record_id,
            "verdict": self.verdict.to_wire() if self.verdict else None,
            "error": {"kind": self.error.kind, "message": self.error.message} if self.error else None,
            "latency": round(self.latency, 6),
            "attempts": self.attempts,
            "cached": self.cached,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ClassificationOutcome":
        verdict = error = None
        if obj.get("verdict") is not None:
            verdict = parse_verdict(json.dumps(obj["verdict"]))
        if obj.get("error") is not None:
            err = obj["error"]
            error = ErrorInfo(err.get("kind", "Error"), err.get("message", ""))
        if verdict is None and error is None:
            error = ErrorInfo("MissingVerdict", "outcome carried neither verdict nor error")
        return cls(
            record_id=str(obj.get("id", "")),
            verdict=verdict,
            error=error,
            latency=float(obj.get("latency") or 0.0),
            attempts=int(obj.get("attempts") or 0),
            cached=bool(obj.get("cached", False)),
        )


class RateLimiter:
    """Spaces request starts at least ``60 / per_minute`` seconds apart.

    Slots are reserved under a lock, so any 60 s window sees at most
    ``per_minute + 1`` starts no matter how many threads call ``acquire``.
    """

    def __init__(
        self,
        per_minute: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if per_minute <= 0:
            raise ValueError("per_minute must be > 0")
        self.interval = 60.0 / per_minute
        self._clock = clock
        self._sleep = sleep
        self._next: Optional[float] = None
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            now = self._clock()
            start = now if self._next is None else max(now, self._next)
            self._next = start + self.interval
        wait = start - now
        if wait > 0:
            self._sleep(wait)
        return start


class ResponseCache:
    """Content-addressed store of raw verdict payloads.

    With ``directory`` set, entries persist as ``<key[:2]>/<key>.json`` so an
    interrupted batch can resume; otherwise the cache lives in memory.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[str, str] = {}
        self._write_lock = threading.Lock()

    @staticmethod
    def key(model: str, request: ClassificationRequest) -> str:
        digest = hashlib.sha256()
        digest.update(model.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(request.content_hash().encode("ascii"))
        return digest.hexdigest()

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        if self.directory is None:
            return self._memory.get(key)
        try:
            return json.loads(self._path(key).read_text("utf-8"))["payload"]
        except (OSError, ValueError, KeyError):
            return None

    def put(self, key: str, model: str, payload: str) -> None:
        with self._write_lock:
            if self.directory is None:
                self._memory[key] = payload
                return
            atomic_write_text(self._path(key), json.dumps({"model": model, "payload": payload}))

    def __len__(self) -> int:
        if self.directory is None:
            return len(self._memory)
        return sum(1 for _ in self.directory.glob("*/*.json"))


def fit_to_budget(user_content: str, budget: int) -> str:
    """Cut the tail of the EMAIL section so the content fits ``budget`` characters."""
    if len(user_content) <= budget:
        return user_content
    marker = f"\n\n{URL_SECTION_HEADER}\n"
    idx = user_content.find(marker)
    email, extra = (user_content[:idx], user_content[idx:]) if idx >= 0 else (user_content, "")
    room = budget - len(extra) - len(TRUNCATION_MARK) - 1
    if room <= 0:
        # the URL section alone blows the budget; keep the email head instead
        extra = ""
        room = budget - len(TRUNCATION_MARK) - 1
    return email[: max(room, 0)] + " " + TRUNCATION_MARK + extra


def build_payload(req: ClassificationRequest, cfg: ModelConfig) -> dict[str, Any]:
    messages = [{"role": "system", "content": req.system_prompt}]
    if cfg.output_mode == "prompt":
        messages.append({"role": "system", "content": schema_instruction(req.output_schema)})
    messages.append({"role": "user", "content": fit_to_budget(req.user_content, cfg.context_chars)})
    payload: dict[str, Any] = {
        "model": cfg.name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }
    if cfg.seed is not None:
        payload["seed"] = cfg.seed
    if cfg.output_mode == "json_schema":
        payload["response_format"] = {
            "type": "json_schema",
            "json_schema": {"name": "phishing_verdict", "strict": True, "schema": req.output_schema},
        }
    elif cfg.output_mode == "tool":
        payload["tools"] = [
            {
                "type": "function",
                "function": {
                    "name": "phishing_verdict",
                    "description": "Report whether the email is phishing.",
                    "parameters": req.output_schema,
                },
            }
        ]
        payload["tool_choice"] = {"type": "function", "function": {"name": "phishing_verdict"}}
    return payload


def _extract_content(body: Any) -> str:
    try:
        message = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise errors.MalformedPayload("response has no choices[0].message") from None
    calls = message.get("tool_calls") or []
    if calls:
        try:
            return calls[0]["function"]["arguments"]
        except (KeyError, IndexError, TypeError):
            raise errors.MalformedPayload("malformed tool call") from None
    content = message.get("content")
    if not isinstance(content, str):
        raise errors.MalformedPayload("response message has no content")
    return content


_RETRYABLE = (errors.TransportError, errors.RateLimited, errors.Timeout)


def _send(client: httpx.Client, cfg: ModelConfig, payload: dict) -> str:
    headers = {"Content-Type": "application/json"}
    token = cfg.credential()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    try:
        resp = client.post(cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout)
    except httpx.TimeoutException as exc:
        raise errors.Timeout(str(exc) or "request timed out") from None
    except httpx.HTTPError as exc:
        raise errors.TransportError(str(exc) or type(exc).__name__) from None
    if resp.status_code in (401, 403):
        raise errors.AuthError(f"HTTP {resp.status_code}")
    if resp.status_code == 429:
        err = errors.RateLimited("HTTP 429")
        err.retry_after = _retry_after(resp)
        raise err
    if resp.status_code >= 500:
        raise errors.TransportError(f"HTTP {resp.status_code}")
    if resp.status_code >= 400:
        exc = errors.TransportError(f"HTTP {resp.status_code}")
        exc.permanent = True
        raise exc
    try:
        body = resp.json()
    except ValueError:
        raise errors.MalformedPayload("response body is not JSON") from None
    return _extract_content(body)


def _retry_after(resp: httpx.Response) -> Optional[float]:
    value = resp.headers.get("Retry-After")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


def classify_email(
    req: ClassificationRequest,
    cfg: ModelConfig,
    *,
    record_id: str = "",
    client: Optional[httpx.Client] = None,
    limiter: Optional[RateLimiter] = None,
    cache: Optional[ResponseCache] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ClassificationOutcome:
    """Send one request, retrying transport, timeout and 429 failures.

    Failures never raise; they come back in ``outcome.error``.
    """
    started = time.perf_counter()
    key = ResponseCache.key(cfg.name, req) if cache is not None else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            try:
                verdict = parse_verdict(hit)
                return ClassificationOutcome(
                    record_id, verdict=verdict, latency=time.perf_counter() - started,
                    attempts=0, payload=hit, cached=True,
                )
            except errors.VerdictError:
                log.warning("discarding unparseable cache entry %s", key)

    own_client = client is None
    if own_client:
        client = httpx.Client()
    payload = build_payload(req, cfg)
    attempts = 0
    try:
        while True:
            attempts += 1
            if limiter is not None:
                limiter.acquire()
            try:
                content = _send(client, cfg, payload)
                verdict = parse_verdict(content)
            except _RETRYABLE as exc:
                if getattr(exc, "permanent", False) or attempts > cfg.max_retries:
                    return ClassificationOutcome(
                        record_id, error=ErrorInfo.of(exc),
                        latency=time.perf_counter() - started, attempts=attempts,
                    )
                delay = min(cfg.backoff_base * 2 ** (attempts - 1), cfg.backoff_max)
                retry_after = getattr(exc, "retry_after", None)
                if retry_after:
                    delay = max(delay, min(retry_after, cfg.backoff_max))
                log.debug("attempt %d for %s failed (%s); retrying in %.2fs", attempts, record_id, exc, delay)
                sleep(delay)
                continue
            except errors.PhishTriageError as exc:
                return ClassificationOutcome(
                    record_id, error=ErrorInfo.of(exc),
                    latency=time.perf_counter() - started, attempts=attempts,
                )
            if cache is not None:
                cache.put(key, cfg.name, content)
            return ClassificationOutcome(
                record_id, verdict=verdict, latency=time.perf_counter() - started,
                attempts=attempts, payload=content,
            )
    finally:
        if own_client:
            client.close()


def classify_batch(
    corpus: Iterable[UniformRecord],
    cfg: ModelConfig,
    parallelism: int = 4,
    cache: Optional[ResponseCache] = None,
    *,
    client: Optional[httpx.Client] = None,
    limiter: Optional[RateLimiter] = None,
    persona: Optional[str] = None,
    url_summaries: Optional[Mapping[str, str]] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[ClassificationOutcome]:
    """Classify every record with at most ``parallelism`` requests in flight.

    Outcomes come back in corpus order.  Per-record failures are recorded in
    their outcome and never abort the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    records = list(corpus)
    limiter = limiter or RateLimiter(cfg.rate_limit)
    own_client = client is None
    if own_client:
        client = httpx.Client(limits=httpx.Limits(max_connections=parallelism))

    def work(rec: UniformRecord) -> ClassificationOutcome:
        try:
            summary = url_summaries.get(rec.id) if url_summaries else None
            req = build_request(rec, persona=persona, url_summary=summary)
        except errors.PhishTriageError as exc:
            return ClassificationOutcome(rec.id, error=ErrorInfo.of(exc))
        return classify_email(
            req, cfg, record_id=rec.id, client=client, limiter=limiter, cache=cache, sleep=sleep
        )

    try:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, records))
    finally:
        if own_client:
            client.close()
    summary = error_summary(outcomes)
    if summary:
        log.info("batch finished with errors: %s", dict(summary))
    return outcomes


def error_summary(outcomes: Iterable[ClassificationOutcome]) -> Counter:
    """Count error outcomes by kind."""
    return Counter(o.error.kind for o in outcomes if o.error is not None)


def outcomes_to_jsonl(
    outcomes: Iterable[ClassificationOutcome],
    labels: Optional[Mapping[str, Any]] = None,
    model: Optional[str] = None,
) -> str:
    """One JSON object per line; ``label`` is the record's ground truth when known."""
    lines = []
    for outcome in outcomes:
        row = outcome.to_dict()
        if labels is not None:
            label = labels.get(outcome.record_id)
            row["label"] = getattr(label, "value", label)
        if model is not None:
            row["model"] = model
        lines.append(json.dumps(row, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def write_outcomes(path, outcomes, labels=None, model=None) -> None:
    atomic_write_text(Path(path), outcomes_to_jsonl(outcomes, labels, model))


def read_outcomes(path) -> list[tuple[Optional[str], ClassificationOutcome]]:
    """Read an outcomes file as ``(label, outcome)`` pairs, streaming line by line."""
    pairs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for number, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("not an object")
                    pairs.append((obj.get("label"), ClassificationOutcome.from_dict(obj)))
                except (ValueError, errors.VerdictError) as exc:
                    raise errors.UnreadableFile(f"{path}:{number}: bad outcome record: {exc}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise errors.UnreadableFile(f"cannot read {path}: {exc}") from exc
    return pairs
