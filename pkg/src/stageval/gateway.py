"""Model-provider access: HTTP transport, retries, caching, concurrency.

All model calls in the pipeline go through :class:`Gateway`, which layers a
disk cache and a concurrency limit over a provider. :class:`HttpProvider`
talks to any chat-completions style endpoint; :class:`MockProvider` replays
canned responses keyed by request tag for offline runs and tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

import requests

from .errors import ConfigurationError, JsonExtractionError, TransportError

logger = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ProviderConfig:
    """Connection and retry settings for one model provider."""

    base_url: str
    model: str
    temperature: float = 0.0
    api_key_env: str = "STAGEVAL_API_KEY"
    timeout: float = 120.0
    max_retries: int = 4
    backoff_start: float = 1.0
    backoff_factor: float = 2.0
    backoff_jitter: float = 0.2

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ConfigurationError("base_url must be non-empty")
        if not self.model:
            raise ConfigurationError("model must be non-empty")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


@dataclass(frozen=True)
class ChatRequest:
    """One prompt to send, plus an archival tag naming what it is for."""

    system: str
    user: str
    seed: Optional[int] = None
    response_format_hint: Optional[str] = None
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.system.strip():
            raise ValueError("system prompt must be non-empty")
        if not self.user.strip():
            raise ValueError("user prompt must be non-empty")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    cached: bool = False
    provider_latency: float = 0.0


def cache_key(config: ProviderConfig, request: ChatRequest) -> str:
    """Digest identifying a (provider, prompt) pair for cache lookup.

    Exactly these parts participate: base_url, model, temperature, seed,
    system, user. Anything else (tag, retry settings) must not change the key.
    """
    parts = [
        config.base_url,
        config.model,
        repr(config.temperature),
        repr(request.seed),
        request.system,
        request.user,
    ]
    payload = "\x1f".join(parts).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class DiskCache:
    """Response cache on disk: one JSON file per key, no expiry.

    Writes go to a temp file then rename, so a reader never sees a torn
    entry. Writers are serialized in-process; the final rename makes
    cross-process races benign (last write wins with identical content).
    """

    def __init__(self, root: Union[str, os.PathLike]):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> str:
        return os.path.join(self.root, f"{key}.json")

    def get(self, key: str) -> Optional[str]:
        try:
            with open(self._path(key), "r", encoding="utf-8") as f:
                entry = json.load(f)
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("unreadable cache entry %s: %s", key, exc)
            return None
        text = entry.get("text")
        return text if isinstance(text, str) else None

    def put(self, key: str, text: str) -> None:
        final = self._path(key)
        with self._write_lock:
            tmp = f"{final}.tmp.{os.getpid()}.{threading.get_ident()}"
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump({"text": text}, f, ensure_ascii=False)
            os.replace(tmp, final)


class Provider(Protocol):
    config: ProviderConfig

    def complete(self, request: ChatRequest) -> str: ...


class HttpProvider:
    """Chat-completions client with exponential backoff.

    Retries timeouts, connection failures, 429, and 5xx responses with
    doubling delays (start 1s) and +-20% jitter. Other HTTP errors fail
    immediately. After the retry budget, raises TransportError carrying the
    per-attempt log.
    """

    def __init__(
        self,
        config: ProviderConfig,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _delay(self, attempt: int) -> float:
        c = self.config
        base = c.backoff_start * (c.backoff_factor**attempt)
        return base * (1 + self._rng.uniform(-c.backoff_jitter, c.backoff_jitter))

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, request: ChatRequest) -> dict:
        payload: dict = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.response_format_hint:
            payload["response_format"] = {"type": request.response_format_hint}
        return payload

    def complete(self, request: ChatRequest) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        payload = self._payload(request)
        attempts: list[str] = []

        for attempt in range(self.config.max_retries + 1):
            try:
                resp = self._session.post(
                    url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                attempts.append(f"attempt {attempt + 1}: {type(exc).__name__}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        body = resp.json()
                        text = body["choices"][0]["message"]["content"]
                    except (ValueError, LookupError, TypeError) as exc:
                        raise TransportError(
                            f"malformed provider response: {exc}", attempts
                        ) from exc
                    if not isinstance(text, str):
                        raise TransportError(
                            "provider returned non-text content", attempts
                        )
                    return text
                attempts.append(f"attempt {attempt + 1}: HTTP {resp.status_code}")
                if resp.status_code not in RETRYABLE_STATUSES:
                    raise TransportError(
                        f"provider rejected request: HTTP {resp.status_code}", attempts
                    )
            if attempt < self.config.max_retries:
                delay = self._delay(attempt)
                logger.info(
                    "retrying %s in %.2fs (%s)", request.tag or url, delay, attempts[-1]
                )
                self._sleep(delay)

        raise TransportError(
            f"retries exhausted after {len(attempts)} attempts", attempts
        )


MOCK_CONFIG = ProviderConfig(base_url="mock://local", model="mock")


class MockProvider:
    """Replays canned responses by request tag; records every call.

    A fixture value may be a single string or a list of strings consumed in
    order, which lets tests script repair rounds. The call log and the peak
    concurrent-call count are exposed for assertions.
    """

    def __init__(
        self,
        fixtures: Mapping[str, Union[str, Sequence[str]]],
        config: ProviderConfig = MOCK_CONFIG,
        latency: float = 0.0,
    ):
        self.config = config
        self.fixtures = dict(fixtures)
        self.latency = latency
        self.calls: list[ChatRequest] = []
        self.max_active = 0
        self._active = 0
        self._lock = threading.Lock()
        self._cursors: dict[str, int] = {}

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
            self._active += 1
            self.max_active = max(self.max_active, self._active)
            try:
                fixture = self.fixtures[request.tag]
            except KeyError:
                self._active -= 1
                raise TransportError(
                    f"no fixture for tag {request.tag!r}",
                    [f"known tags: {sorted(self.fixtures)}"],
                ) from None
            if isinstance(fixture, str):
                text = fixture
            else:
                cursor = self._cursors.get(request.tag, 0)
                text = fixture[min(cursor, len(fixture) - 1)]
                self._cursors[request.tag] = cursor + 1
        try:
            if self.latency:
                time.sleep(self.latency)
            return text
        finally:
            with self._lock:
                self._active -= 1

    def calls_for(self, tag: str) -> list[ChatRequest]:
        return [c for c in self.calls if c.tag == tag]


class Gateway:
    """Front door for model calls: cache first, then rate-limited provider."""

    def __init__(
        self,
        provider: Provider,
        cache: Optional[DiskCache] = None,
        max_concurrency: int = 4,
    ):
        if max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be >= 1")
        self.provider = provider
        self.cache = cache
        self._semaphore = threading.Semaphore(max_concurrency)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(self.provider.config, request)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return ChatResponse(text=hit, cached=True, provider_latency=0.0)
        with self._semaphore:
            start = time.monotonic()
            text = self.provider.complete(request)
            latency = time.monotonic() - start
        if self.cache is not None:
            self.cache.put(key, text)
        return ChatResponse(text=text, cached=False, provider_latency=latency)


def extract_json_block(text: str) -> dict:
    """Recover the first balanced JSON object embedded in model output.

    Tolerates surrounding prose and markdown code fences. Raises
    JsonExtractionError (carrying the full text) when no object parses.
    """
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    raise JsonExtractionError("no JSON object found in model output", text)
