"""Teacher-endpoint access: live HTTP chat completions, retries with backoff,
bounded concurrency, and a deterministic record/replay backend for offline runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

logger = logging.getLogger(__name__)

API_KEY_ENV = "TEACHER_API_KEY"
MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
DEFAULT_TIMEOUT_S = 120.0
DEFAULT_RATE_LIMIT_RPS = 2.0


class TeacherClientError(Exception):
    """Base class for teacher-client failures."""


class TransportError(TeacherClientError):
    """Network/HTTP failure; retryable variants are retried with backoff."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class AuthError(TeacherClientError):
    """Credential rejected or absent; never retried."""


class ReplayMiss(TeacherClientError):
    """Replay backend has no recorded response for the request hash."""


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str | None = None
    image_refs: tuple[str, ...] = ()
    temperature: float = 0.0
    max_tokens: int = 2048
    seed: int | None = None
    # correlation id chosen by the caller; excluded from the content hash
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be nonempty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not isinstance(self.image_refs, tuple):
            object.__setattr__(self, "image_refs", tuple(self.image_refs))

    def content_hash(self) -> str:
        """Stable digest of everything that determines the response.

        Local image files are hashed by content so fixtures are addressed by
        what the model actually saw; other refs (URLs, missing paths) hash by
        the reference string.
        """
        payload = {
            "system": self.system_text,
            "user": self.user_text,
            "images": [_image_digest(ref) for ref in self.image_refs],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _image_digest(ref: str) -> str:
    p = Path(ref)
    try:
        if p.is_file():
            return "sha256:" + hashlib.sha256(p.read_bytes()).hexdigest()
    except OSError:
        pass
    return ref


@dataclass(frozen=True)
class TeacherResponse:
    text: str
    latency_ms: int
    attempt_count: int
    backend: str  # "live" | "replay"


class LiveBackend:
    """OpenAI-style chat-completion endpoint with bearer-token auth."""

    name = "live"
    rate_limited = True

    def __init__(
        self,
        endpoint_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
    ):
        if not endpoint_url:
            raise ValueError("endpoint_url must be set for the live backend")
        self.endpoint_url = endpoint_url
        self.model = model
        self.timeout_s = timeout_s
        self._api_key = api_key
        self._session = session or requests.Session()

    def send(self, req: ChatRequest) -> str:
        key = self._api_key or os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no credential: set {API_KEY_ENV}")
        body = self._build_body(req)
        try:
            resp = self._session.post(
                self.endpoint_url,
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"credential rejected ({resp.status_code})")
        if resp.status_code in (408, 429) or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}", retryable=False) from exc

    def _build_body(self, req: ChatRequest) -> dict:
        content: str | list[dict]
        if req.image_refs:
            content = [{"type": "text", "text": req.user_text}]
            for ref in req.image_refs:
                content.append({"type": "image_url", "image_url": {"url": _image_url(ref)}})
        else:
            content = req.user_text
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": content})
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        return body


def _image_url(ref: str) -> str:
    # URLs pass through by reference; local files are inlined as base64.
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    p = Path(ref)
    if p.is_file():
        mime = mimetypes.guess_type(p.name)[0] or "image/png"
        b64 = base64.b64encode(p.read_bytes()).decode("ascii")
        return f"data:{mime};base64,{b64}"
    return ref


class ReplayBackend:
    """Serves recorded responses keyed by request content hash."""

    name = "replay"
    rate_limited = False

    def __init__(self, fixture_path: str | Path):
        self.fixture_path = Path(fixture_path)
        self._responses = load_fixture(self.fixture_path)

    def send(self, req: ChatRequest) -> str:
        h = req.content_hash()
        try:
            return self._responses[h]
        except KeyError:
            raise ReplayMiss(
                f"no recorded response for hash {h} (tag={req.request_tag!r}) "
                f"in {self.fixture_path}"
            ) from None


def load_fixture(path: str | Path) -> dict[str, str]:
    responses: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                responses[row["hash"]] = row["response"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{i}: bad fixture line: {exc}") from exc
    return responses


def write_fixture(entries: dict[str, str], path: str | Path) -> None:
    """Atomic write: either the full archive lands or nothing does."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for h, response in entries.items():
                fh.write(json.dumps({"hash": h, "response": response}, ensure_ascii=False))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _TokenBucket:
    def __init__(self, rate_per_s: float):
        self.rate = rate_per_s
        self.capacity = max(1.0, rate_per_s)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class TeacherClient:
    """Retry/rate-limit wrapper over a backend; shareable across workers."""

    def __init__(
        self,
        backend,
        rate_limit_rps: float = DEFAULT_RATE_LIMIT_RPS,
        max_attempts: int = MAX_ATTEMPTS,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.backend = backend
        self.max_attempts = max_attempts
        self._sleep = sleep
        self._rng = rng or random.Random()
        limited = getattr(backend, "rate_limited", True) and rate_limit_rps > 0
        self._bucket = _TokenBucket(rate_limit_rps) if limited else None

    def complete(self, req: ChatRequest) -> TeacherResponse:
        started = time.monotonic()
        attempt = 0
        while True:
            attempt += 1
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                text = self.backend.send(req)
            except TransportError as exc:
                if not exc.retryable or attempt >= self.max_attempts:
                    logger.warning("request %s failed after %d attempts: %s", req.request_tag, attempt, exc)
                    raise
                delay = BACKOFF_BASE_S * BACKOFF_FACTOR ** (attempt - 1)
                delay *= 1.0 + 0.25 * self._rng.random()
                logger.debug(
                    "retrying %s in %.1fs (attempt %d/%d): %s",
                    req.request_tag, delay, attempt, self.max_attempts, exc,
                )
                self._sleep(delay)
                continue
            latency_ms = int((time.monotonic() - started) * 1000)
            return TeacherResponse(
                text=text,
                latency_ms=latency_ms,
                attempt_count=attempt,
                backend=self.backend.name,
            )

    def complete_many(
        self, reqs: Sequence[ChatRequest], parallelism: int
    ) -> list[TeacherResponse | TeacherClientError]:
        """Run requests with at most `parallelism` in flight.

        Output order matches input order; per-item failures come back as the
        exception instance at that index rather than aborting the batch.
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not reqs:
            return []

        def one(req: ChatRequest) -> TeacherResponse | TeacherClientError:
            try:
                return self.complete(req)
            except TeacherClientError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=min(parallelism, len(reqs))) as pool:
            return list(pool.map(one, reqs))


def record_session(
    reqs: Iterable[ChatRequest],
    live_client: TeacherClient,
    store_path: str | Path,
) -> int:
    """Capture responses for later replay; duplicate hashes keep the last write.

    Returns the number of distinct entries persisted.
    """
    entries: dict[str, str] = {}
    for req in reqs:
        resp = live_client.complete(req)
        entries[req.content_hash()] = resp.text
    write_fixture(entries, store_path)
    return len(entries)
