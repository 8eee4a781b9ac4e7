"""
Chat-completion client with a content-addressed response cache.

Requests are POSTed as ``{model, messages, temperature, max_tokens}``; the
answer is the first choice's message content. Every answer is cached under
sha256(canonical request + trial index), so a populated cache replays a
whole evaluation offline.
"""
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Generic, List, Literal, Optional, Sequence, Tuple, TypeVar

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.config import settings
from app.core.errors import BatchError, DataError, EndpointError, ReplayMissError
from app.core.storage import atomic_write_text, canonical_json, sha256_text
from app.services.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    role: Literal["system", "user", "assistant"]
    content: str


class LlmRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: str
    messages: Tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = Field(512, ge=1)

    @classmethod
    def user(cls, model: str, prompt: str, temperature: float = 0.0, max_tokens: int = 512) -> "LlmRequest":
        return cls(
            model=model,
            messages=(ChatMessage(role="user", content=prompt),),
            temperature=temperature,
            max_tokens=max_tokens,
        )

    def payload(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def cache_key(self, trial: int) -> str:
        return sha256_text(canonical_json({"request": self.payload(), "trial": trial}))


class CacheEntry(BaseModel):
    key: str
    response_text: str
    endpoint: str
    timestamp: str
    trial: int


class ResponseCache:
    """One JSON file per entry, named by the hex cache key."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Optional[CacheEntry]:
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            return CacheEntry.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise DataError(f"Corrupt cache entry {path}: {exc}") from exc

    def put(self, entry: CacheEntry) -> None:
        atomic_write_text(self.path_for(entry.key), canonical_json(entry.model_dump()) + "\n")

    def __contains__(self, key: str) -> bool:
        return self.path_for(key).exists()

    def __len__(self) -> int:
        if not self.directory.exists():
            return 0
        return sum(1 for _ in self.directory.glob("*.json"))


@dataclass(frozen=True)
class Exchange:
    key: str
    text: str
    from_cache: bool


class LlmClient:
    """
    Cache-first access to one chat-completion endpoint.

    Safe to share between worker threads: httpx.Client is thread-safe and
    cache files are written atomically.
    """

    def __init__(
        self,
        endpoint: str,
        url: Optional[str],
        cache: ResponseCache,
        replay_only: bool = False,
        http_client: Optional[httpx.Client] = None,
        api_key: Optional[str] = None,
        timeout: Optional[float] = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.url = url
        self.cache = cache
        self.replay_only = replay_only
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._api_key = api_key if api_key is not None else settings.API_KEY
        self._owns_http = http_client is None
        self._http = http_client or httpx.Client(timeout=timeout or settings.REQUEST_TIMEOUT)
        self.network_calls = 0
        self._calls_lock = threading.Lock()

    def close(self) -> None:
        if self._owns_http:
            self._http.close()

    def exchange(self, request: LlmRequest, trial: int = 0) -> Exchange:
        key = request.cache_key(trial)
        entry = self.cache.get(key)
        if entry is not None:
            logger.debug("Cache hit %s (%s, trial %d)", key[:12], self.endpoint, trial)
            return Exchange(key, entry.response_text, True)
        if self.replay_only:
            raise ReplayMissError(key)
        if not self.url:
            raise EndpointError(f"Endpoint '{self.endpoint}' has no URL configured and key {key} is not cached")

        logger.debug("Cache miss %s (%s, trial %d)", key[:12], self.endpoint, trial)
        text = self._post(request)
        self.cache.put(
            CacheEntry(
                key=key,
                response_text=text,
                endpoint=self.endpoint,
                timestamp=datetime.now(timezone.utc).isoformat(),
                trial=trial,
            )
        )
        return Exchange(key, text, False)

    def complete(self, request: LlmRequest, trial: int = 0) -> str:
        return self.exchange(request, trial).text

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * (2 ** (attempt - 1)))

    def _post(self, request: LlmRequest) -> str:
        last_error = ""
        for attempt in range(1, self.max_attempts + 1):
            with self._calls_lock:
                self.network_calls += 1
            try:
                response = self._http.post(self.url, json=request.payload(), headers=self._headers())
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}: {response.text[:500]}"
                elif response.status_code >= 400:
                    raise EndpointError(
                        f"Endpoint '{self.endpoint}' rejected the request with HTTP {response.status_code}: {response.text}",
                        response.status_code,
                    )
                else:
                    return self._answer_text(response)

            if attempt < self.max_attempts:
                delay = self._backoff(attempt)
                logger.debug("Attempt %d/%d to %s failed (%s); retrying in %.2fs", attempt, self.max_attempts, self.endpoint, last_error, delay)
                self._sleep(delay)

        raise EndpointError(f"Endpoint '{self.endpoint}' failed after {self.max_attempts} attempts: {last_error}")

    def _answer_text(self, response: httpx.Response) -> str:
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(
                f"Endpoint '{self.endpoint}' returned an unexpected body: {response.text[:500]}", response.status_code
            ) from exc
        return content or ""


class ModelSession:
    """Binds a client to one model's decoding parameters and a trial index."""

    def __init__(self, client: LlmClient, model: str, trial: int, temperature: float = 0.0, max_tokens: int = 512):
        self.client = client
        self.model = model
        self.trial = trial
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.cache_keys: List[str] = []

    def request_for(self, prompt: str) -> LlmRequest:
        return LlmRequest.user(self.model, prompt, self.temperature, self.max_tokens)

    def ask(self, prompt: str) -> str:
        exchange = self.client.exchange(self.request_for(prompt), self.trial)
        self.cache_keys.append(exchange.key)
        return exchange.text


@dataclass(frozen=True)
class BatchFailure:
    index: int
    message: str


@dataclass
class BatchResult(Generic[T]):
    results: List[Optional[T]]
    failures: List[BatchFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_for_failures(self) -> None:
        if self.failures:
            raise BatchError([failure.index for failure in self.failures], [failure.message for failure in self.failures])


def run_batch(
    jobs: Sequence[Callable[[], T]],
    max_in_flight: int,
    tracker: Optional[ProgressTracker] = None,
    batch_id: str = "batch",
) -> BatchResult[T]:
    """
    Run `jobs` with at most `max_in_flight` executing at once.

    Results come back in input order. A job that raises is recorded as a
    failure at its index; the other jobs still run.
    """
    if max_in_flight < 1:
        raise ValueError(f"max_in_flight must be at least 1, got {max_in_flight}")

    results: List[Optional[T]] = [None] * len(jobs)
    errors: Dict[int, str] = {}
    if tracker is not None:
        tracker.start_batch(batch_id, len(jobs))

    def run(index: int) -> None:
        if tracker is not None:
            tracker.job_started(batch_id)
        failed = False
        try:
            results[index] = jobs[index]()
        except Exception as exc:
            failed = True
            errors[index] = str(exc) or type(exc).__name__
            logger.warning("Job %d of batch %s failed: %s", index, batch_id, errors[index])
        finally:
            if tracker is not None:
                tracker.job_finished(batch_id, failed)

    if max_in_flight == 1:
        for index in range(len(jobs)):
            run(index)
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            list(pool.map(run, range(len(jobs))))

    if tracker is not None:
        tracker.finish_batch(batch_id)
    failures = [BatchFailure(index, errors[index]) for index in sorted(errors)]
    return BatchResult(results, failures)


def complete_batch(
    client: LlmClient,
    requests: Sequence[LlmRequest],
    max_in_flight: int,
    trial: int = 0,
    tracker: Optional[ProgressTracker] = None,
) -> BatchResult[str]:
    jobs = [lambda request=request: client.complete(request, trial) for request in requests]
    return run_batch(jobs, max_in_flight, tracker, batch_id=f"{client.endpoint}/trial-{trial}")
