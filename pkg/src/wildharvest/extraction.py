"""LLM information extraction: article relevance and image captions.

The backend must answer with a structured ``{relevant, captions[],
image_urls[]}`` record — there is no free-text parsing fallback.
Extracted image URLs are merged into the article before candidate
collection. Irrelevant articles contribute nothing downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .backends import TextModelBackend, validate_extraction_response
from .errors import ValidationError
from .types import Article, DescriptionSet

logger = logging.getLogger(__name__)

DEFAULT_WORD_BUDGET = 8000


@dataclass(frozen=True)
class PromptTemplate:
    """A frozen, versioned instruction prompt."""

    template_id: str  # p1 (article extraction) | p2 (image-caption scoring)
    text: str
    version: str

    def __post_init__(self):
        required = {"p1": "{article}", "p2": "{caption}"}.get(self.template_id)
        if required is None:
            raise ValidationError(f"unknown template id {self.template_id!r}")
        if required not in self.text:
            raise ValidationError(
                f"template {self.template_id}@{self.version} lacks the {required} placeholder"
            )

    @property
    def ref(self) -> str:
        return f"{self.template_id}@{self.version}"


_P1_V1 = """\
You review a fact-check article and report any AI-generated images it discusses.
Answer in the article's own language. Respond with a single JSON object:
{{"relevant": bool, "captions": [string], "image_urls": [string]}}.
Set relevant=false with empty lists when the article does not discuss
AI-generated imagery. Otherwise write one caption per distinct AI-generated
image the article describes, each a self-contained visual description, and
list any image URLs the article text names.

Article:
{article}
"""

_P2_V1 = """\
Rate how well the attached image matches this description of an AI-generated
image on an integer scale from 0 (unrelated) to 100 (depicts exactly this).
Respond with a single JSON object: {{"score": int}}.

Description:
{caption}
"""

TEMPLATES: dict[tuple[str, str], PromptTemplate] = {
    ("p1", "v1"): PromptTemplate("p1", _P1_V1, "v1"),
    ("p2", "v1"): PromptTemplate("p2", _P2_V1, "v1"),
}


def get_template(ref: str) -> PromptTemplate:
    """Look up a template by ``<id>@<version>`` reference (e.g. ``p1@v1``)."""
    template_id, _, version = ref.partition("@")
    try:
        return TEMPLATES[(template_id, version or "v1")]
    except KeyError as exc:
        raise ValidationError(f"no such template {ref!r}") from exc


def truncate_body(text: str, word_budget: int = DEFAULT_WORD_BUDGET) -> str:
    """Head-biased truncation for very long articles: 90% head, 10% tail."""
    words = text.split()
    if len(words) <= word_budget:
        return text
    head = int(word_budget * 0.9)
    tail = word_budget - head
    return " ".join(words[:head]) + " ... " + " ".join(words[-tail:])


def _run_extraction(article, p1, backend, word_budget):
    if not article.body_text.strip():
        raise ValidationError(f"article {article.article_id} has an empty body")
    prompt = p1.text.format(article=truncate_body(article.body_text, word_budget))
    rec = validate_extraction_response(
        article.article_id,
        backend.extract(article.article_id, prompt, article.body_text),
    )
    captions = tuple(c.strip() for c in rec["captions"])
    descriptions = DescriptionSet(
        article_id=article.article_id,
        captions=captions if rec["relevant"] else (),
        relevant=bool(rec["relevant"]),
    )
    return descriptions, rec


def extract_descriptions(
    article: Article,
    p1: PromptTemplate,
    backend: TextModelBackend,
    word_budget: int = DEFAULT_WORD_BUDGET,
) -> DescriptionSet:
    """Run the extraction prompt for one article.

    Raises ExtractionSchemaError when the backend response violates the
    schema (callers quarantine the article) and BackendUnavailable when
    the backend cannot be reached.
    """
    return _run_extraction(article, p1, backend, word_budget)[0]


def extract_article(
    article: Article,
    p1: PromptTemplate,
    backend: TextModelBackend,
    word_budget: int = DEFAULT_WORD_BUDGET,
) -> tuple[DescriptionSet, Article]:
    """Extraction plus URL merge: returns the descriptions and the article
    with any backend-extracted image URLs appended (order-preserving)."""
    descriptions, rec = _run_extraction(article, p1, backend, word_budget)
    merged_urls = list(article.raw_image_urls)
    for url in rec["image_urls"]:
        if url not in merged_urls:
            merged_urls.append(url)
    if len(merged_urls) != len(article.raw_image_urls):
        article = Article(
            article_id=article.article_id,
            source_url=article.source_url,
            source_name=article.source_name,
            published_at=article.published_at,
            body_text=article.body_text,
            raw_image_urls=tuple(merged_urls),
            date_inferred=article.date_inferred,
        )
    return descriptions, article
