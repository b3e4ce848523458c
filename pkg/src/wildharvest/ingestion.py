"""Collect articles, candidate images, and the real-image pool.

Every source sits behind one narrow adapter interface returning record
lists, so live services and offline fixtures are interchangeable.
Fixture adapters are fully offline and deterministic; re-running any
fetch with the same config yields byte-identical stored artifacts.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .errors import (
    AdapterPayloadError,
    EmptyCandidateSet,
    SourceUnavailable,
    ValidationError,
)
from .images import probe_image
from .store import ContentStore, hash_content
from .types import Article, CandidateImage, RealImage, parse_date, utc_timestamp

logger = logging.getLogger(__name__)

ADAPTER_KINDS = ("factcheck_api", "web_scrape", "news_api", "social_feed", "fixture")

MAX_IMAGE_BYTES = 64 * 1024 * 1024
MIN_IMAGE_SIDE = 32

_RETRIES = 3
_BACKOFF_S = 1.0
FIXTURE_SCHEME = "fixture:"


@dataclass(frozen=True)
class SourceAdapter:
    """One content source: a live HTTP record list or an offline fixture."""

    adapter_name: str
    kind: str
    endpoint: str  # URL for live adapters, corpus directory for fixtures
    auth: str | None = None
    page_token_field: str = "next_page_token"

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValidationError(f"unknown adapter kind {self.kind!r}")

    @property
    def is_fixture(self) -> bool:
        return self.kind == "fixture"


@dataclass(frozen=True)
class CollectResult:
    """Images stored for one article plus records of skipped URLs."""

    candidates: tuple[CandidateImage, ...]
    skipped: tuple[dict, ...]


@dataclass(frozen=True)
class PoolResult:
    """Deduplicated real pool plus per-source accounting."""

    images: tuple[RealImage, ...]
    per_source_counts: dict


def _http_get(url: str, params: dict | None = None, timeout: float = 30.0):
    """GET with 3 attempts and exponential backoff; GETs only, idempotent."""
    import requests

    last: Exception | None = None
    for attempt in range(_RETRIES):
        try:
            resp = requests.get(url, params=params, timeout=timeout)
            resp.raise_for_status()
            return resp
        except Exception as exc:  # noqa: BLE001
            last = exc
            if attempt < _RETRIES - 1:
                time.sleep(_BACKOFF_S * (2**attempt))
    raise SourceUnavailable(f"GET {url} failed after {_RETRIES} attempts: {last}") from last


def _list_live_records(adapter: SourceAdapter, query: str, date_range: tuple[date, date]) -> list[dict]:
    records: list[dict] = []
    params = {
        "q": query,
        "from": date_range[0].isoformat(),
        "to": date_range[1].isoformat(),
    }
    token: str | None = None
    while True:
        page_params = dict(params)
        if token:
            page_params[adapter.page_token_field] = token
        if adapter.auth:
            page_params["key"] = adapter.auth
        payload = _http_get(adapter.endpoint, params=page_params).json()
        records.extend(payload.get("records", []))
        token = payload.get(adapter.page_token_field)
        if not token:
            return records


def _list_fixture_records(adapter: SourceAdapter, filename: str) -> list[dict]:
    path = Path(adapter.endpoint) / filename
    if not path.exists():
        raise SourceUnavailable(f"fixture adapter {adapter.adapter_name}: {path} missing")
    records = []
    for line in path.read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def _article_from_record(rec: dict, adapter: SourceAdapter, fetch_date: date) -> Article:
    try:
        source_url = rec["source_url"]
        body_text = rec.get("body_text", "")
    except (KeyError, TypeError) as exc:
        raise AdapterPayloadError(f"adapter {adapter.adapter_name}: bad article record") from exc
    published_raw = rec.get("published_at")
    if published_raw:
        published_at, inferred = parse_date(published_raw), False
    else:
        published_at, inferred = fetch_date, True
    article_id = rec.get("article_id") or hash_content(source_url.encode())[:16]
    return Article(
        article_id=article_id,
        source_url=source_url,
        source_name=rec.get("source_name", adapter.adapter_name),
        published_at=published_at,
        body_text=body_text,
        raw_image_urls=tuple(rec.get("image_urls") or ()),
        date_inferred=inferred,
    )


def fetch_articles(
    adapter: SourceAdapter,
    query: str,
    date_range: tuple[date, date],
    fetch_date: date | None = None,
) -> list[Article]:
    """Fetch articles in the window, deduped by source_url and sorted.

    Subject-matter filtering (whether an article is about AI imagery) is
    the extractor's job; this op only filters by date.
    """
    lo, hi = date_range
    if lo > hi:
        raise ValidationError(f"date range reversed: {lo} > {hi}")
    fetch_date = fetch_date or date.today()
    if adapter.is_fixture:
        raw = _list_fixture_records(adapter, "articles/articles.jsonl")
    else:
        raw = _list_live_records(adapter, query, date_range)
    articles: dict[str, Article] = {}
    for rec in raw:
        try:
            art = _article_from_record(rec, adapter, fetch_date)
        except AdapterPayloadError as exc:
            logger.warning("skipping malformed article record: %s", exc)
            continue
        if not (lo <= art.published_at <= hi):
            continue
        articles.setdefault(art.source_url, art)
    return sorted(articles.values(), key=lambda a: (a.published_at, a.article_id))


def fetch_image_bytes(url: str, adapter: SourceAdapter) -> bytes:
    """Resolve one image URL: fixture-relative path or live GET."""
    if url.startswith(FIXTURE_SCHEME):
        rel = url[len(FIXTURE_SCHEME):]
        path = Path(adapter.endpoint) / rel
        if not path.exists():
            raise SourceUnavailable(f"fixture image missing: {rel}")
        return path.read_bytes()
    if adapter.is_fixture:
        raise SourceUnavailable(f"fixture adapter cannot fetch live URL {url}")
    return _http_get(url).content


def _guard_image(data: bytes) -> tuple[str, int, int]:
    if len(data) > MAX_IMAGE_BYTES:
        raise ValidationError(f"image exceeds {MAX_IMAGE_BYTES} bytes")
    fmt, width, height = probe_image(data)
    if width < MIN_IMAGE_SIDE or height < MIN_IMAGE_SIDE:
        raise ValidationError(f"image {width}x{height} below {MIN_IMAGE_SIDE}px minimum")
    return fmt, width, height


def collect_candidate_images(
    article: Article,
    adapter: SourceAdapter,
    store: ContentStore,
    fetch_date: date | None = None,
    parallelism: int = 4,
) -> CollectResult:
    """Fetch and store an article's images, deduplicating by content hash.

    Individual URL failures become skip records; they are not fatal.
    Raises EmptyCandidateSet when nothing at all is retrievable, which
    callers treat as an article-level flag rather than a run failure.
    """
    if not article.raw_image_urls:
        raise EmptyCandidateSet(f"article {article.article_id} carries no image urls")
    fetched_at = utc_timestamp(fetch_date or date.today())

    def fetch(url: str):
        return url, fetch_image_bytes(url, adapter)

    results: list[tuple[str, bytes]] = []
    skipped: list[dict] = []
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        for url, outcome in zip(
            article.raw_image_urls,
            pool.map(lambda u: _try_fetch(fetch, u), article.raw_image_urls),
        ):
            if isinstance(outcome, Exception):
                skipped.append({"url": url, "reason": str(outcome)})
            else:
                results.append(outcome)

    by_id: dict[str, CandidateImage] = {}
    for url, data in results:
        try:
            fmt, width, height = _guard_image(data)
        except ValidationError as exc:
            skipped.append({"url": url, "reason": str(exc)})
            continue
        digest = store.put(
            data,
            meta={
                "format": fmt,
                "width_px": width,
                "height_px": height,
                "source_urls": [url],
                "article_ids": [article.article_id],
            },
        )
        if digest not in by_id:
            by_id[digest] = CandidateImage(
                image_id=digest,
                article_id=article.article_id,
                source_url=url,
                format=fmt,
                width_px=width,
                height_px=height,
                fetched_at=fetched_at,
            )
    if skipped:
        logger.warning(
            "article %s: skipped %d of %d image urls",
            article.article_id, len(skipped), len(article.raw_image_urls),
        )
    if not by_id:
        raise EmptyCandidateSet(f"article {article.article_id}: no image retrievable")
    ordered = tuple(by_id[k] for k in sorted(by_id))
    return CollectResult(candidates=ordered, skipped=tuple(skipped))


def _try_fetch(fn, url):
    try:
        return fn(url)
    except Exception as exc:  # noqa: BLE001 - converted to skip records
        return exc


def fetch_real_pool(
    adapters: list[SourceAdapter],
    date_range: tuple[date, date],
    store: ContentStore,
    query: str = "",
) -> PoolResult:
    """Build the deduplicated real-image pool from news/social adapters.

    AI-related content exclusion happens at the adapter query level;
    fixture adapters honor an ``ai_related`` record flag the same way.
    """
    if not adapters:
        raise ValidationError("fetch_real_pool needs at least one adapter")
    lo, hi = date_range
    failures = 0
    pool: dict[str, RealImage] = {}
    counts = {"news": 0, "social": 0}
    for adapter in adapters:
        try:
            if adapter.is_fixture:
                records = _list_fixture_records(adapter, "realpool/records.jsonl")
            else:
                records = _list_live_records(adapter, query, date_range)
        except SourceUnavailable as exc:
            logger.warning("real-pool adapter %s unavailable: %s", adapter.adapter_name, exc)
            failures += 1
            continue
        default_source = "social" if adapter.kind == "social_feed" else "news"
        for rec in records:
            if rec.get("ai_related"):
                continue  # excluded server-side for live adapters
            published = parse_date(rec["published_at"])
            if not (lo <= published <= hi):
                continue
            try:
                data = fetch_image_bytes(rec["url"], adapter)
                fmt, width, height = _guard_image(data)
            except (SourceUnavailable, ValidationError) as exc:
                logger.warning("real-pool url %s skipped: %s", rec.get("url"), exc)
                continue
            source = rec.get("source", default_source)
            digest = store.put(
                data,
                meta={
                    "format": fmt,
                    "width_px": width,
                    "height_px": height,
                    "source_urls": [rec["url"]],
                    "outlets": [rec.get("outlet", adapter.adapter_name)],
                },
            )
            if digest not in pool:
                pool[digest] = RealImage(
                    image_id=digest,
                    source=source,
                    outlet=rec.get("outlet", adapter.adapter_name),
                    published_at=published,
                )
                counts[source] += 1
    if failures == len(adapters):
        raise SourceUnavailable("all real-pool adapters failed")
    images = tuple(pool[k] for k in sorted(pool))
    if not images:
        logger.warning("real pool is empty for range %s..%s", lo, hi)
    return PoolResult(images=images, per_source_counts=counts)
