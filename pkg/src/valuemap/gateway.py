"""Execute prompt jobs against a pluggable chat backend.

Three backend kinds share one contract, ``complete(job) -> str``:

``http-chat``
    OpenAI-compatible ``/chat/completions`` endpoint (system + user message).
``replay``
    JSON-lines fixture, one ``{"job_id": ..., "raw_text": ...}`` per line.
``scripted``
    A Python callable, mapping or constant string; used for tests and dry runs.

Only live responses are written to the cache. Replay and scripted runs are
already deterministic, and keeping them out of the cache keeps their
artifacts byte-identical across reruns.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

from .errors import (
    AuthError,
    BatchAborted,
    FixtureMiss,
    IOFailure,
    MissingFile,
    ParseError,
    RateLimited,
    TransportError,
)
from .prompts import PromptJob, SamplingParams

log = logging.getLogger(__name__)

BACKEND_KINDS = ("http-chat", "replay", "scripted")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 0.5
    multiplier: float = 2.0
    max_delay: float = 30.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * self.multiplier ** (attempt - 1))


@dataclass
class BackendConfig:
    kind: str = "replay"
    model_id: str = "gpt-4"
    endpoint: str | None = None
    auth_env: str = "OPENAI_API_KEY"
    fixture_path: str | Path | None = None
    script: Callable[[PromptJob], str] | Mapping[str, str] | str | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    rate_limit: float | None = None
    parallelism: int = 4
    timeout: float = 60.0
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"backend kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.retry.max_attempts < 1:
            raise ValueError("retry.max_attempts must be >= 1")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.kind == "http-chat" and not self.endpoint:
            raise ValueError("http-chat backend needs an endpoint URL")
        if self.kind == "replay" and not self.fixture_path:
            raise ValueError("replay backend needs a fixture_path")
        if self.kind == "scripted" and self.script is None:
            raise ValueError("scripted backend needs a script")

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "model_id": self.model_id,
            "parallelism": self.parallelism,
            "max_attempts": self.retry.max_attempts,
            "rate_limit": self.rate_limit,
            "sampling": {
                "temperature": self.sampling.temperature,
                "max_tokens": self.sampling.max_tokens,
                "seed": self.sampling.seed,
            },
        }
        if self.kind == "http-chat":
            out["endpoint"] = self.endpoint
            out["auth_env"] = self.auth_env
        elif self.kind == "replay":
            out["fixture_path"] = str(self.fixture_path)
        return out


@dataclass(frozen=True)
class RawResponse:
    job_id: str
    raw_text: str
    model_id: str
    latency_ms: int
    attempt_count: int
    source: str  # live | cache | fixture | script

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "raw_text": self.raw_text,
            "model_id": self.model_id,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
            "source": self.source,
        }


@dataclass(frozen=True)
class JobFailure:
    """Placeholder for a job that failed in continue mode."""

    index: int
    job_id: str
    error: Exception

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "job_id": self.job_id,
            "error": type(self.error).__name__,
            "message": str(self.error),
        }


# backends


class HttpChatBackend:
    source = "live"

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def _token(self) -> str:
        token = os.environ.get(self.config.auth_env)
        if not token:
            raise AuthError(f"environment variable {self.config.auth_env} is not set")
        return token

    def payload(self, job: PromptJob) -> dict:
        sampling = self.config.sampling
        body = {
            "model": self.config.model_id,
            "messages": [
                {"role": "system", "content": job.system_prompt},
                {"role": "user", "content": job.user_prompt},
            ],
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
        }
        if sampling.seed is not None:
            body["seed"] = sampling.seed
        return body

    def complete(self, job: PromptJob) -> str:
        headers = {"Authorization": f"Bearer {self._token()}"}
        try:
            resp = self._client.post(self.config.endpoint, json=self.payload(job), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.config.endpoint}")
        if resp.status_code == 429:
            raise RateLimited("HTTP 429")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat-completions body: {exc}") from exc

    def close(self):
        self._client.close()


def load_fixture(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records[str(rec["job_id"])] = rec["raw_text"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: bad fixture record: {exc}", lineno) from exc
    return records


class ReplayBackend:
    source = "fixture"

    def __init__(self, config: BackendConfig):
        self.records = load_fixture(config.fixture_path)

    def complete(self, job: PromptJob) -> str:
        try:
            return self.records[job.job_id]
        except KeyError:
            raise FixtureMiss(job.job_id) from None

    def close(self):
        pass


class ScriptedBackend:
    """Deterministic stand-in; also records call counts and peak concurrency."""

    source = "script"

    def __init__(self, config: BackendConfig, delay: float = 0.0):
        self.script = config.script
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, job: PromptJob) -> str:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            script = self.script
            if callable(script):
                return script(job)
            if isinstance(script, Mapping):
                return script[job.job_id]
            return str(script)
        finally:
            with self._lock:
                self.in_flight -= 1

    def close(self):
        pass


def make_backend(config: BackendConfig, **kwargs):
    if config.kind == "http-chat":
        return HttpChatBackend(config, **kwargs)
    if config.kind == "replay":
        return ReplayBackend(config)
    return ScriptedBackend(config, **kwargs)


# cache


class ResponseCache:
    """Content-addressed store of live responses keyed by job id.

    Layout under ``root``::

        objects/<job_id[:2]>/<job_id>.json   one record per job
        runs/<run_id>.jsonl                  append-only log of writes per run

    Reads are lock-free; writes go through a temp file and ``os.replace`` so a
    reader never sees a partial object.
    """

    def __init__(self, root, run_id: str = "default"):
        self.root = Path(root)
        self.run_id = run_id
        self._lock = threading.Lock()
        self.writes = 0

    def _object_path(self, job_id: str) -> Path:
        return self.root / "objects" / job_id[:2] / f"{job_id}.json"

    def get(self, job_id: str) -> dict | None:
        path = self._object_path(job_id)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except ValueError:
            log.warning("ignoring corrupt cache object %s", path)
            return None

    def put(self, response: RawResponse) -> None:
        rec = {"job_id": response.job_id, "raw_text": response.raw_text,
               "model_id": response.model_id}
        path = self._object_path(response.job_id)
        blob = json.dumps(rec, ensure_ascii=False, sort_keys=True)
        with self._lock:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(f".tmp{threading.get_ident()}")
                tmp.write_text(blob, encoding="utf-8")
                os.replace(tmp, path)
                log_path = self.root / "runs" / f"{self.run_id}.jsonl"
                log_path.parent.mkdir(parents=True, exist_ok=True)
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(blob + "\n")
            except OSError as exc:
                raise IOFailure(f"cache write failed: {exc}") from exc
            self.writes += 1

    def __contains__(self, job_id: str) -> bool:
        return self._object_path(job_id).is_file()


# execution


class RateLimiter:
    """Spaces call starts at least ``1/rate`` seconds apart across threads."""

    def __init__(self, rate: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate if rate else 0.0
        self.clock = clock
        self.sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self):
        if not self.interval:
            return
        with self._lock:
            now = self.clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self.sleep(start - now)


class Gateway:
    def __init__(self, config: BackendConfig, cache: ResponseCache | None = None,
                 backend=None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.cache = cache
        self.backend = backend if backend is not None else make_backend(config)
        self.sleep = sleep
        self.limiter = RateLimiter(config.rate_limit, sleep=sleep)

    def execute(self, job: PromptJob) -> RawResponse:
        if self.cache is not None:
            hit = self.cache.get(job.job_id)
            if hit is not None:
                return RawResponse(job.job_id, hit["raw_text"],
                                   hit.get("model_id", self.config.model_id), 0, 0, "cache")

        policy = self.config.retry
        for attempt in range(1, policy.max_attempts + 1):
            self.limiter.acquire()
            started = time.perf_counter()
            try:
                text = self.backend.complete(job)
            except TransportError as exc:
                if attempt == policy.max_attempts:
                    raise TransportError(
                        f"job {job.job_id} ({job.entity}/{job.item_code}) failed after "
                        f"{attempt} attempts: {exc}"
                    ) from exc
                delay = policy.delay(attempt)
                log.info("retrying %s in %.2fs after %s", job.job_id, delay, exc)
                self.sleep(delay)
                continue
            live = self.backend.source == "live"
            latency = round((time.perf_counter() - started) * 1000) if live else 0
            response = RawResponse(job.job_id, text, self.config.model_id, latency,
                                   attempt, self.backend.source)
            if live and self.cache is not None:
                self.cache.put(response)
            return response
        raise AssertionError("unreachable")

    def execute_batch(self, jobs: list[PromptJob], fail_fast: bool = False,
                      progress: Callable[[int], None] | None = None):
        """Run jobs with bounded parallelism; results come back in input order.

        In continue mode a failed job leaves a :class:`JobFailure` at its index.
        In fail-fast mode the first failure raises :class:`BatchAborted`.
        """
        results: list[Any] = [None] * len(jobs)
        done = 0
        lock = threading.Lock()
        aborted = threading.Event()

        def run(i: int):
            nonlocal done
            if aborted.is_set():
                return
            try:
                results[i] = self.execute(jobs[i])
            except Exception as exc:  # noqa: BLE001 - recorded per job
                results[i] = JobFailure(i, jobs[i].job_id, exc)
                if fail_fast:
                    aborted.set()
                    raise
            with lock:
                done += 1
                if progress is not None:
                    progress(done)

        workers = min(self.config.parallelism, max(1, len(jobs)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, i) for i in range(len(jobs))]
            if fail_fast:
                finished, pending = wait(futures, return_when=FIRST_EXCEPTION)
                failed = [f for f in finished if f.exception() is not None]
                if failed:
                    for f in pending:
                        f.cancel()
                    pool.shutdown(wait=True, cancel_futures=True)
                    prefix = 0
                    for r in results:
                        if not isinstance(r, RawResponse):
                            break
                        prefix += 1
                    raise BatchAborted(prefix, failed[0].exception())
            else:
                wait(futures)
        return results

    def close(self):
        self.backend.close()


def execute(job: PromptJob, backend: BackendConfig | Gateway,
            cache: ResponseCache | None = None) -> RawResponse:
    gw = backend if isinstance(backend, Gateway) else Gateway(backend, cache)
    return gw.execute(job)


def execute_batch(jobs: list[PromptJob], backend: BackendConfig | Gateway,
                  cache: ResponseCache | None = None, fail_fast: bool = False):
    gw = backend if isinstance(backend, Gateway) else Gateway(backend, cache)
    return gw.execute_batch(jobs, fail_fast=fail_fast)
