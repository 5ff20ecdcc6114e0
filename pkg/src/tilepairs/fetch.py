"""Polite, concurrent, cached retrieval of tiles from XYZ tile sources.

Network etiquette is non-negotiable here: every source carries a shared
token-bucket rate limit (burst of one), a mandatory User-Agent, and
full-jitter exponential backoff on 5xx/429/timeouts. Downloaded bytes are
committed to an on-disk cache with temp-file+fsync+rename discipline and a
sha256 sidecar, so a killed process can never leave a corrupt entry that
passes the checksum gate.
"""

from __future__ import annotations

import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from hashlib import sha256
from io import BytesIO
from pathlib import Path

import requests
from PIL import Image, UnidentifiedImageError

from .geo import TileCoord

REQUEST_TIMEOUT_S = 20.0
_PLACEHOLDERS = ("{z}", "{x}", "{y}")


class FetchError(Exception):
    """Base class for tile retrieval failures."""


class PermanentFetchError(FetchError):
    """Failure that retrying cannot fix (4xx other than 429, bad payload)."""


class TransientFetchError(FetchError):
    """Retries exhausted on a retryable condition (5xx, 429, timeouts)."""


@dataclass(frozen=True)
class TileSource:
    """A named XYZ tile endpoint plus its politeness policy."""

    name: str
    url_template: str
    headers: tuple[tuple[str, str], ...]
    max_requests_per_second: float
    max_retries: int = 4
    backoff_base_ms: int = 250

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("source name must be non-empty")
        for ph in _PLACEHOLDERS:
            if self.url_template.count(ph) != 1:
                raise ValueError(
                    f"url_template must contain {ph} exactly once: {self.url_template!r}"
                )
        if isinstance(self.headers, dict):
            object.__setattr__(self, "headers", tuple(sorted(self.headers.items())))
        if not any(k.lower() == "user-agent" for k, _ in self.headers):
            raise ValueError(f"source {self.name!r} must set a User-Agent header")
        if not self.max_requests_per_second > 0:
            raise ValueError("max_requests_per_second must be positive")
        if self.max_retries < 0 or self.backoff_base_ms < 0:
            raise ValueError("max_retries and backoff_base_ms must be >= 0")

    def header_dict(self) -> dict[str, str]:
        return dict(self.headers)


def tile_url(source: TileSource, t: TileCoord) -> str:
    """Substitute decimal z/x/y into the source's URL template."""
    return (
        source.url_template.replace("{z}", str(t.z))
        .replace("{x}", str(t.x))
        .replace("{y}", str(t.y))
    )


class TokenBucket:
    """Thread-safe token bucket with capacity 1: one immediate request,
    then a steady max rate. Shared per source across all workers."""

    def __init__(self, rate: float) -> None:
        self._rate = float(rate)
        self._tokens = 1.0
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(1.0, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


_limiters: dict[str, TokenBucket] = {}
_limiters_lock = threading.Lock()


def _limiter_for(source: TileSource) -> TokenBucket:
    with _limiters_lock:
        bucket = _limiters.get(source.name)
        if bucket is None:
            bucket = TokenBucket(source.max_requests_per_second)
            _limiters[source.name] = bucket
        return bucket


def reset_rate_limiters() -> None:
    """Drop all shared per-source buckets (test isolation hook)."""
    with _limiters_lock:
        _limiters.clear()


def _decodes_as_image(data: bytes) -> bool:
    try:
        with Image.open(BytesIO(data)) as img:
            img.load()
        return True
    except (UnidentifiedImageError, OSError):
        return False


class TileCache:
    """Content-checked tile store laid out as source/z/x/y.png plus a
    .sha256 sidecar per entry. An entry exists only if both files are
    present and the digest matches the bytes."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, source_name: str, t: TileCoord) -> Path:
        return self.root / source_name / str(t.z) / str(t.x) / f"{t.y}.png"

    def _sidecar(self, source_name: str, t: TileCoord) -> Path:
        return self.path(source_name, t).with_suffix(".png.sha256")

    def get(self, source_name: str, t: TileCoord) -> bytes | None:
        """Verified bytes, or None. A checksum mismatch invalidates the
        entry so the caller refetches."""
        path = self.path(source_name, t)
        sidecar = self._sidecar(source_name, t)
        try:
            data = path.read_bytes()
            recorded = sidecar.read_text().strip()
        except OSError:
            return None
        if sha256(data).hexdigest() != recorded:
            self.invalidate(source_name, t)
            return None
        return data

    def has(self, source_name: str, t: TileCoord) -> bool:
        return self.get(source_name, t) is not None

    def put(self, source_name: str, t: TileCoord, data: bytes) -> None:
        """Atomically commit wire bytes (no re-encode) plus their digest."""
        if not _decodes_as_image(data):
            raise ValueError(f"refusing to cache undecodable bytes for {t}")
        path = self.path(source_name, t)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._atomic_write(path, data)
        digest = sha256(data).hexdigest()
        self._atomic_write(self._sidecar(source_name, t), (digest + "\n").encode())

    def invalidate(self, source_name: str, t: TileCoord) -> None:
        for p in (self.path(source_name, t), self._sidecar(source_name, t)):
            try:
                p.unlink()
            except OSError:
                pass

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def view(self, source_name: str) -> "SourceCache":
        return SourceCache(self, source_name)


@dataclass(frozen=True)
class SourceCache:
    """A TileCache bound to one source name."""

    cache: TileCache
    source_name: str

    def get(self, t: TileCoord) -> bytes | None:
        return self.cache.get(self.source_name, t)

    def put(self, t: TileCoord, data: bytes) -> None:
        self.cache.put(self.source_name, t, data)

    def path(self, t: TileCoord) -> Path:
        return self.cache.path(self.source_name, t)


@dataclass
class FetchReport:
    """Outcome of a batch; requested == downloaded + cache_hits + len(failed)."""

    requested: int
    downloaded: int
    cache_hits: int
    failed: list[tuple[TileCoord, str]] = field(default_factory=list)
    elapsed_ms: int = 0

    def ok(self) -> bool:
        return not self.failed

    def to_json(self) -> dict:
        return {
            "requested": self.requested,
            "downloaded": self.downloaded,
            "cache_hits": self.cache_hits,
            "failed": [
                {"z": t.z, "x": t.x, "y": t.y, "error": kind} for t, kind in self.failed
            ],
            "elapsed_ms": self.elapsed_ms,
        }


_thread_local = threading.local()


def _session() -> requests.Session:
    sess = getattr(_thread_local, "session", None)
    if sess is None:
        sess = requests.Session()
        _thread_local.session = sess
    return sess


def _retry_after_seconds(response: requests.Response) -> float | None:
    value = response.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None  # HTTP-date form: fall back to computed backoff


def fetch_tile(
    source: TileSource, t: TileCoord, cache: TileCache
) -> tuple[bytes, str]:
    """Fetch one tile, returning (bytes, "cache"|"network").

    Cache hits cost no network call. Network fetches honor the shared
    per-source rate limit on every attempt, retry 5xx/429/timeouts with
    full-jitter exponential backoff, respect Retry-After, and commit to
    the cache before returning.
    """
    cached = cache.get(source.name, t)
    if cached is not None:
        return cached, "cache"

    url = tile_url(source, t)
    limiter = _limiter_for(source)
    sess = _session()
    retry_after: float | None = None
    last_error = "no attempts made"
    for attempt in range(source.max_retries + 1):
        if attempt > 0:
            delay = random.uniform(0.0, source.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
            if retry_after is not None:
                delay = max(delay, retry_after)
            time.sleep(delay)
        limiter.acquire()
        try:
            response = sess.get(url, headers=source.header_dict(), timeout=REQUEST_TIMEOUT_S)
        except requests.RequestException as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            retry_after = None
            continue
        status = response.status_code
        if status == 200:
            data = response.content
            try:
                cache.put(source.name, t, data)
            except ValueError as exc:
                raise PermanentFetchError(f"{url}: {exc}") from exc
            return data, "network"
        if status == 429 or 500 <= status < 600:
            last_error = f"HTTP {status}"
            retry_after = _retry_after_seconds(response)
            continue
        raise PermanentFetchError(f"HTTP {status} for {url}")
    raise TransientFetchError(
        f"retries exhausted after {source.max_retries + 1} attempts for {url}: {last_error}"
    )


def fetch_batch(
    source: TileSource,
    tiles: list[TileCoord],
    cache: TileCache,
    parallelism: int = 4,
) -> FetchReport:
    """Fetch all tiles with a bounded worker pool; partial failure never
    aborts the batch. The aggregate rate across workers stays under the
    source limit because all workers share one token bucket."""
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    started = time.monotonic()
    downloaded = 0
    cache_hits = 0
    failed: list[tuple[TileCoord, str]] = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {pool.submit(fetch_tile, source, t, cache): t for t in tiles}
        for future in as_completed(futures):
            t = futures[future]
            try:
                _, origin = future.result()
            except PermanentFetchError:
                failed.append((t, "permanent"))
            except TransientFetchError:
                failed.append((t, "transient"))
            else:
                if origin == "cache":
                    cache_hits += 1
                else:
                    downloaded += 1
    failed.sort(key=lambda item: item[0])
    report = FetchReport(
        requested=len(tiles),
        downloaded=downloaded,
        cache_hits=cache_hits,
        failed=failed,
        elapsed_ms=int((time.monotonic() - started) * 1000),
    )
    assert report.requested == report.downloaded + report.cache_hits + len(report.failed)
    return report
