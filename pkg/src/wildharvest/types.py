"""Shared domain types for every pipeline stage.

All types are immutable value objects (frozen dataclasses) and safe to
share across threads. Canonical ordering and serialization live in
``manifest``; this module only defines shape and invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from fractions import Fraction

from .errors import ValidationError

IMAGE_FORMATS = ("JPEG", "PNG", "WEBP", "other")
ORIGINS = ("itw", "gen", "real_pool", "replay")
REAL_SOURCES = ("news", "social")


def exact_floor_product(x: float, n: int) -> int:
    """floor(x * n) with x read as the decimal it was written as.

    Plain float multiplication can land one below the mathematical
    product (e.g. 0.29 * 100 -> 28.999...), which would corrupt size
    laws like floor(rho * pool); going through Fraction(str(x)) keeps
    the arithmetic exact for decimal inputs.
    """
    return int(Fraction(str(x)) * n // 1)


def parse_date(text: str) -> date:
    """Parse a UTC calendar date, accepting YYYY-MM-DD or YYYY-MM."""
    text = text.strip()
    try:
        if len(text) == 7:  # year-month, e.g. generator release dates
            return date.fromisoformat(text + "-01")
        return date.fromisoformat(text[:10])
    except ValueError as exc:
        raise ValidationError(f"not a calendar date: {text!r}") from exc


def utc_timestamp(d: date) -> datetime:
    """Midnight UTC timestamp for a calendar date."""
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Article:
    """One fact-check document, the unit of weak supervision."""

    article_id: str
    source_url: str
    source_name: str
    published_at: date
    body_text: str
    raw_image_urls: tuple[str, ...] = ()
    date_inferred: bool = False

    def __post_init__(self):
        if not self.article_id:
            raise ValidationError("article_id must be nonempty")


@dataclass(frozen=True)
class DescriptionSet:
    """Captions of the AI images an article describes; empty iff irrelevant."""

    article_id: str
    captions: tuple[str, ...]
    relevant: bool

    def __post_init__(self):
        if self.relevant != bool(self.captions):
            raise ValidationError(
                f"article {self.article_id}: relevant={self.relevant} but "
                f"{len(self.captions)} captions"
            )
        for c in self.captions:
            if not c or c != c.strip():
                raise ValidationError(
                    f"article {self.article_id}: captions must be nonempty and trimmed"
                )


@dataclass(frozen=True)
class CandidateImage:
    """An image harvested for an article, keyed by its content hash."""

    image_id: str
    article_id: str
    source_url: str
    format: str
    width_px: int
    height_px: int
    fetched_at: datetime

    def __post_init__(self):
        if self.format not in IMAGE_FORMATS:
            raise ValidationError(f"unknown image format {self.format!r}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValidationError("image dimensions must be positive")


@dataclass(frozen=True)
class ScoredCandidate:
    """VLM alignment scores for one candidate against all captions."""

    image_id: str
    anchor_score: float
    per_caption_scores: tuple[float, ...]
    selection: str = "rejected"  # anchor | similarity_expanded | rejected

    def __post_init__(self):
        if self.selection not in ("anchor", "similarity_expanded", "rejected", "score_failed"):
            raise ValidationError(f"bad selection {self.selection!r}")
        if self.per_caption_scores:
            if abs(self.anchor_score - max(self.per_caption_scores)) > 1e-12:
                raise ValidationError(
                    f"{self.image_id}: anchor_score must equal max per-caption score"
                )
        for s in (self.anchor_score, *self.per_caption_scores):
            if not 0.0 <= s <= 1.0:
                raise ValidationError(f"{self.image_id}: score {s} outside [0,1]")


@dataclass(frozen=True)
class Segment:
    """A cropped region of a parent image, stored as its own content."""

    segment_id: str
    parent_image_id: str
    bounding_box: tuple[int, int, int, int]  # x, y, w, h in parent pixels
    confidence: float

    def __post_init__(self):
        x, y, w, h = self.bounding_box
        if w <= 0 or h <= 0 or x < 0 or y < 0:
            raise ValidationError(f"segment {self.segment_id}: degenerate box")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"segment {self.segment_id}: confidence outside [0,1]")


@dataclass(frozen=True)
class DatasetEntry:
    """One labeled, provenance-tagged record in a training manifest."""

    image_id: str
    label: int  # 0 = real, 1 = generated
    origin: str
    event_date: date
    round_introduced: int
    generator_name: str | None = None
    parent_image_id: str | None = None
    source_origin: str | None = None  # original origin for replayed entries
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"{self.image_id}: label must be 0 or 1")
        if self.origin not in ORIGINS:
            raise ValidationError(f"{self.image_id}: unknown origin {self.origin!r}")
        if self.origin == "gen" and not self.generator_name:
            raise ValidationError(f"{self.image_id}: gen entries need generator_name")
        if self.origin == "replay" and self.source_origin not in ("itw", "gen", "real_pool"):
            raise ValidationError(
                f"{self.image_id}: replay entries must carry their source origin"
            )

    def as_replay(self) -> "DatasetEntry":
        """Re-tag this entry as replayed, preserving its original origin."""
        if self.origin == "replay":
            return self
        return replace(
            self,
            origin="replay",
            source_origin=self.origin,
            provenance=tuple(sorted(set(self.provenance) | {f"replay-of:{self.origin}"})),
        )

    @property
    def stratum_origin(self) -> str:
        """Origin used for stratified sampling; replays keep their source."""
        return self.source_origin if self.origin == "replay" else self.origin


@dataclass(frozen=True)
class DatasetManifest:
    """A round's dataset: entries sorted by image_id for stable bytes."""

    manifest_id: str
    round: int
    entries: tuple[DatasetEntry, ...]
    seed: int
    created_at: date

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda e: e.image_id))
        object.__setattr__(self, "entries", ordered)

    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def duplicate_ids(self) -> list[str]:
        seen: set[str] = set()
        dupes: list[str] = []
        for e in self.entries:
            if e.image_id in seen:
                dupes.append(e.image_id)
            seen.add(e.image_id)
        return dupes


def _check_unit(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name}={value} outside [0,1]")


@dataclass(frozen=True)
class ThresholdConfig:
    """Pipeline-wide thresholds; defaults match the deployed configuration."""

    tau_anchor: float = 0.8
    tau_sim: float = 0.75
    top_k: int = 500
    seg_threshold: float = 0.4
    acc_threshold: float = 0.5
    replay_rho: float = 0.05

    def __post_init__(self):
        _check_unit("tau_anchor", self.tau_anchor)
        _check_unit("tau_sim", self.tau_sim)
        _check_unit("seg_threshold", self.seg_threshold)
        _check_unit("replay_rho", self.replay_rho)
        if self.top_k < 1:
            raise ValidationError("top_k must be a positive integer")


@dataclass(frozen=True)
class RealImage:
    """A trusted real image (implicit label 0) from the real pool."""

    image_id: str
    source: str  # news | social
    outlet: str
    published_at: date

    def __post_init__(self):
        if self.source not in REAL_SOURCES:
            raise ValidationError(f"{self.image_id}: source must be one of {REAL_SOURCES}")


@dataclass(frozen=True)
class Pair:
    """A fake image matched with its most similar unconsumed reals."""

    fake_id: str
    real_ids: tuple[str, ...]
    similarities: tuple[float, ...]

    def __post_init__(self):
        if len(self.real_ids) != len(self.similarities):
            raise ValidationError(f"pair {self.fake_id}: ragged real/similarity lists")
        if len(set(self.real_ids)) != len(self.real_ids):
            raise ValidationError(f"pair {self.fake_id}: duplicate real ids")
        for a, b in zip(self.similarities, self.similarities[1:]):
            if b > a + 1e-12:
                raise ValidationError(f"pair {self.fake_id}: similarities must be non-increasing")


@dataclass(frozen=True)
class ScoreRecord:
    """One detector output: P(generated) for a labeled image."""

    image_id: str
    score: float
    label: int
    dataset_name: str
    generator_name: str | None = None
    task_id: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0 or self.score != self.score:
            raise ValidationError(f"{self.image_id}: score must be finite in [0,1]")
        if self.label not in (0, 1):
            raise ValidationError(f"{self.image_id}: label must be 0 or 1")


@dataclass(frozen=True)
class UpdateRound:
    """State of one continual update round t."""

    t: int
    window_start: date
    window_end: date
    itw_manifest: str | None = None
    gen_manifest: str | None = None
    replay_manifest: str | None = None
    assembled_manifest: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.t < 0:
            raise ValidationError("round index must be non-negative")
        if self.window_end < self.window_start:
            raise ValidationError(f"round {self.t}: window end precedes start")

    def contains(self, d: date) -> bool:
        return self.window_start <= d <= self.window_end


@dataclass(frozen=True)
class ReplayBuffer:
    """Seeded sample of proportion rho of previously accumulated data."""

    round: int
    rho: float
    entries: tuple[DatasetEntry, ...]
    source_pool_size: int
    seed: int

    def __post_init__(self):
        _check_unit("rho", self.rho)
        expected = exact_floor_product(self.rho, self.source_pool_size)
        if len(self.entries) != expected:
            raise ValidationError(
                f"replay buffer size {len(self.entries)} != floor(rho*pool) = {expected}"
            )
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("replay buffer entries must be duplicate-free")


@dataclass(frozen=True)
class TrainingJob:
    """A detector-update job handed to the external trainer."""

    job_id: str
    round: int
    manifest_id: str
    manifest_hash: str
    detector_backend: str
    hyperparameters: tuple[tuple[str, str], ...] = field(default_factory=tuple)
