"""Fixture-adapter ingestion: articles, candidates, and the real pool."""

from __future__ import annotations

from datetime import date

import pytest

from wildharvest.errors import EmptyCandidateSet, SourceUnavailable, ValidationError
from wildharvest.ingestion import (
    SourceAdapter,
    collect_candidate_images,
    fetch_articles,
    fetch_real_pool,
)
from wildharvest.store import ContentStore
from wildharvest.types import Article

from .conftest import CORPUS

FIXTURE = SourceAdapter(adapter_name="fixture-articles", kind="fixture", endpoint=str(CORPUS))
FULL_YEAR = (date(2025, 1, 1), date(2025, 12, 31))


def test_fetch_articles_filters_sorts_and_dedups():
    q1 = fetch_articles(FIXTURE, "", (date(2025, 1, 1), date(2025, 3, 31)))
    assert [a.article_id for a in q1] == [f"art-{i:03d}" for i in range(1, 7)]
    dates = [a.published_at for a in q1]
    assert dates == sorted(dates)
    # art-024 shares art-023's source_url and is dropped
    full = fetch_articles(FIXTURE, "", FULL_YEAR)
    ids = [a.article_id for a in full]
    assert "art-023" in ids and "art-024" not in ids
    assert len(full) == 23


def test_fetch_articles_empty_range_is_success():
    got = fetch_articles(FIXTURE, "", (date(2024, 6, 1), date(2024, 6, 1)))
    assert got == []


def test_fetch_articles_rejects_reversed_range():
    with pytest.raises(ValidationError):
        fetch_articles(FIXTURE, "", (date(2025, 2, 1), date(2025, 1, 1)))


def test_fetch_articles_unreachable_fixture():
    broken = SourceAdapter(adapter_name="gone", kind="fixture", endpoint="/nonexistent")
    with pytest.raises(SourceUnavailable):
        fetch_articles(broken, "", FULL_YEAR)


def _article(article_id: str, urls: list[str]) -> Article:
    return Article(
        article_id=article_id,
        source_url=f"https://factcheck.example.org/{article_id}",
        source_name="example-factcheck",
        published_at=date(2025, 2, 1),
        body_text="body",
        raw_image_urls=tuple(urls),
    )


def test_collect_partial_success_records_skips(tmp_path):
    store = ContentStore(tmp_path / "store")
    art = _article(
        "art-x",
        [
            "fixture:images/cand_001.png",
            "fixture:images/cand_002.png",
            "fixture:images/cand_003.png",
            "fixture:images/missing_001.png",
        ],
    )
    result = collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
    assert len(result.candidates) == 3
    assert len(result.skipped) == 1
    assert "missing" in result.skipped[0]["reason"]
    for cand in result.candidates:
        assert store.exists(cand.image_id)
        assert cand.format == "PNG"


def test_collect_dedups_identical_bytes_with_merged_provenance(tmp_path):
    store = ContentStore(tmp_path / "store")
    art = _article(
        "art-y", ["fixture:images/cand_010.png", "fixture:images/cand_010_copy.png"]
    )
    result = collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
    assert len(result.candidates) == 1
    meta = store.read_meta(result.candidates[0].image_id)
    assert len(meta["source_urls"]) == 2


def test_collect_enforces_minimum_size(tmp_path):
    store = ContentStore(tmp_path / "store")
    art = _article("art-z", ["fixture:images/cand_900_small.png",
                             "fixture:images/cand_005.png"])
    result = collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
    assert len(result.candidates) == 1
    assert any("below" in s["reason"] for s in result.skipped)


def test_collect_empty_candidate_set_flags_article(tmp_path):
    store = ContentStore(tmp_path / "store")
    with pytest.raises(EmptyCandidateSet):
        collect_candidate_images(
            _article("art-0", ["fixture:images/missing_001.png"]), FIXTURE, store
        )
    with pytest.raises(EmptyCandidateSet):
        collect_candidate_images(_article("art-0", []), FIXTURE, store)


def test_collect_output_sorted_and_rerun_identical(tmp_path):
    store = ContentStore(tmp_path / "store")
    art = _article(
        "art-s",
        [f"fixture:images/cand_{i:03d}.png" for i in (9, 3, 7, 1)],
    )
    first = collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
    ids = [c.image_id for c in first.candidates]
    assert ids == sorted(ids)
    second = collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
    assert first.candidates == second.candidates


def test_collect_result_independent_of_parallelism(tmp_path):
    urls = [f"fixture:images/cand_{i:03d}.png" for i in (5, 12, 31, 44, 2, 19)]
    art = _article("art-p", urls)
    results = []
    for p in (1, 4, 8):
        store = ContentStore(tmp_path / f"store-{p}")
        results.append(
            collect_candidate_images(art, FIXTURE, store, fetch_date=date(2026, 1, 15))
        )
    assert results[0].candidates == results[1].candidates == results[2].candidates


def test_real_pool_dedup_exclusion_and_counts(tmp_path):
    store = ContentStore(tmp_path / "store")
    pool = fetch_real_pool([FIXTURE], FULL_YEAR, store)
    ids = [r.image_id for r in pool.images]
    assert len(ids) == len(set(ids))
    # 230 unique files; the byte-dup record collapses, the undersized and
    # missing records are skipped, and the two ai_related records are excluded
    assert len(ids) == 230
    assert pool.per_source_counts == {"news": 160, "social": 70}


def test_real_pool_date_exclusion_yields_empty(tmp_path):
    store = ContentStore(tmp_path / "store")
    pool = fetch_real_pool([FIXTURE], (date(2024, 1, 1), date(2024, 1, 2)), store)
    assert pool.images == ()


def test_real_pool_requires_an_adapter(tmp_path):
    with pytest.raises(ValidationError):
        fetch_real_pool([], FULL_YEAR, ContentStore(tmp_path / "store"))


def test_real_pool_all_adapters_failing(tmp_path):
    broken = SourceAdapter(adapter_name="gone", kind="fixture", endpoint="/nonexistent")
    with pytest.raises(SourceUnavailable):
        fetch_real_pool([broken], FULL_YEAR, ContentStore(tmp_path / "store"))
