"""LLM extraction: relevance gating, captions, URL merge, quarantine."""

from __future__ import annotations

import json
from datetime import date

import pytest

from wildharvest.backends import TextModelBackend
from wildharvest.errors import ExtractionSchemaError, ValidationError
from wildharvest.extraction import (
    PromptTemplate,
    extract_article,
    extract_descriptions,
    get_template,
    truncate_body,
)
from wildharvest.types import Article

from .conftest import CORPUS

P1 = get_template("p1@v1")
FIXTURE_MAP = "mock:" + str(CORPUS / "extraction" / "responses.json")


def _article(article_id="art-001", body="A viral AI image claim.", urls=()):
    return Article(
        article_id=article_id,
        source_url=f"https://factcheck.example.org/{article_id}",
        source_name="example-factcheck",
        published_at=date(2025, 1, 10),
        body_text=body,
        raw_image_urls=tuple(urls),
    )


def _mock_backend(tmp_path, table: dict) -> TextModelBackend:
    path = tmp_path / "responses.json"
    path.write_text(json.dumps(table))
    return TextModelBackend(backend_name="mock", endpoint=f"mock:{path}")


def test_relevant_article_yields_ordered_captions(tmp_path):
    backend = _mock_backend(
        tmp_path,
        {"art-001": {"relevant": True, "captions": ["first", "second"], "image_urls": []}},
    )
    ds = extract_descriptions(_article(), P1, backend)
    assert ds.relevant and ds.captions == ("first", "second")


def test_irrelevant_article_discard_path(tmp_path):
    backend = _mock_backend(
        tmp_path, {"art-001": {"relevant": False, "captions": [], "image_urls": []}}
    )
    ds = extract_descriptions(_article(), P1, backend)
    assert not ds.relevant and ds.captions == ()


def test_relevance_with_zero_captions_is_schema_error(tmp_path):
    backend = _mock_backend(
        tmp_path, {"art-001": {"relevant": True, "captions": [], "image_urls": []}}
    )
    with pytest.raises(ExtractionSchemaError):
        extract_descriptions(_article(), P1, backend)


@pytest.mark.parametrize(
    "bad",
    [
        {"relevant": "yes", "captions": [], "image_urls": []},
        {"relevant": True, "captions": "one", "image_urls": []},
        {"captions": [], "image_urls": []},
        {"relevant": False, "captions": [], "image_urls": [1]},
    ],
)
def test_malformed_responses_are_schema_errors(tmp_path, bad):
    backend = _mock_backend(tmp_path, {"art-001": bad})
    with pytest.raises(ExtractionSchemaError):
        extract_descriptions(_article(), P1, backend)


def test_url_merge_preserves_order_and_dedups(tmp_path):
    backend = _mock_backend(
        tmp_path,
        {
            "art-001": {
                "relevant": True,
                "captions": ["c"],
                "image_urls": ["u2", "u3", "u1"],
            }
        },
    )
    ds, merged = extract_article(_article(urls=["u1", "u2"]), P1, backend)
    assert ds.relevant
    assert merged.raw_image_urls == ("u1", "u2", "u3")


def test_empty_body_rejected(tmp_path):
    backend = _mock_backend(tmp_path, {})
    with pytest.raises(ValidationError):
        extract_descriptions(_article(body="   "), P1, backend)


def test_article_missing_from_mock_map_is_irrelevant(tmp_path):
    backend = _mock_backend(tmp_path, {})
    ds = extract_descriptions(_article("art-unknown"), P1, backend)
    assert not ds.relevant


def test_mock_extraction_is_deterministic():
    backend = TextModelBackend(backend_name="fixture", endpoint=FIXTURE_MAP)
    first = extract_descriptions(_article("art-001"), P1, backend)
    second = extract_descriptions(_article("art-001"), P1, backend)
    assert first == second and first.relevant


def test_corpus_relevant_fraction_matches_fixture_ground_truth():
    backend = TextModelBackend(backend_name="fixture", endpoint=FIXTURE_MAP)
    table = json.loads((CORPUS / "extraction" / "responses.json").read_text())
    relevant = quarantined = 0
    for article_id in sorted(table):
        try:
            ds = extract_descriptions(_article(article_id), P1, backend)
        except ExtractionSchemaError:
            quarantined += 1
            continue
        relevant += ds.relevant
    assert relevant == 16  # fixture ground truth: 16 of 24 articles
    assert quarantined == 1


def test_truncation_is_head_biased():
    text = " ".join(f"w{i}" for i in range(1000))
    short = truncate_body(text, word_budget=100)
    words = short.split()
    assert words[0] == "w0" and words[-1] == "w999"
    assert len(words) == 101  # 90 head + ellipsis + 10 tail
    assert truncate_body("tiny text", word_budget=100) == "tiny text"


def test_template_placeholders_enforced():
    with pytest.raises(ValidationError):
        PromptTemplate("p1", "no placeholder here", "v9")
    with pytest.raises(ValidationError):
        PromptTemplate("p2", "also {article} wrong one", "v9")
    with pytest.raises(ValidationError):
        get_template("p9@v1")
    assert get_template("p2@v1").ref == "p2@v1"
