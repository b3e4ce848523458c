"""Anchor selection, similarity expansion, final-set union, segmentation.

The selection chain per article: VLM-score every candidate against every
caption, keep candidates whose best score meets tau_anchor as anchors,
expand with candidates whose embedding similarity to any anchor meets
tau_sim, take the union, then cut region segments out of each kept
image. Both thresholds are inclusive (>=), and the segmentation
threshold follows the same convention.
"""

from __future__ import annotations

import logging

import numpy as np

from .backends import EmbeddingBackend, ImageTextScorerBackend, SegmenterBackend
from .errors import (
    BackendUnavailable,
    DimensionError,
    ValidationError,
    ZeroVectorError,
)
from .extraction import PromptTemplate
from .images import clip_box, crop_to_png, decode_pixels, probe_image
from .store import ContentStore
from .types import CandidateImage, DescriptionSet, ScoredCandidate, Segment, ThresholdConfig

logger = logging.getLogger(__name__)


class EmbeddingCache:
    """In-memory vector cache keyed by (backend, model version, image)."""

    def __init__(self):
        self._vectors: dict[tuple[str, str, str], np.ndarray] = {}

    def get_or_compute(self, backend: EmbeddingBackend, image_id: str) -> np.ndarray:
        key = (backend.backend_name, backend.model_version, image_id)
        if key not in self._vectors:
            self._vectors[key] = backend.embed(image_id)
        return self._vectors[key]

    def __len__(self) -> int:
        return len(self._vectors)


def score_candidates(
    cands: list[CandidateImage],
    descriptions: DescriptionSet,
    p2: PromptTemplate,
    scorer: ImageTextScorerBackend,
) -> list[ScoredCandidate]:
    """Score every candidate against every caption; anchor score is the max.

    A backend failure on one image marks that candidate ``score_failed``
    and the run continues; failed candidates never reach later stages.
    """
    if not descriptions.relevant or not descriptions.captions:
        raise ValidationError(
            f"article {descriptions.article_id} is not relevant; nothing to score"
        )
    out = []
    for cand in cands:
        try:
            per_caption = tuple(
                scorer.score(cand.image_id, caption, p2.text.format(caption=caption))
                for caption in descriptions.captions
            )
        except BackendUnavailable as exc:
            logger.warning("scoring failed for %s: %s", cand.image_id[:12], exc)
            out.append(
                ScoredCandidate(
                    image_id=cand.image_id,
                    anchor_score=0.0,
                    per_caption_scores=(),
                    selection="score_failed",
                )
            )
            continue
        out.append(
            ScoredCandidate(
                image_id=cand.image_id,
                anchor_score=max(per_caption),
                per_caption_scores=per_caption,
            )
        )
    return sorted(out, key=lambda s: s.image_id)


def select_anchors(scored: list[ScoredCandidate], cfg: ThresholdConfig) -> list[ScoredCandidate]:
    """Candidates whose anchor score meets tau_anchor (boundary inclusive)."""
    anchors = []
    for s in scored:
        if s.selection == "score_failed":
            continue
        if s.anchor_score >= cfg.tau_anchor:
            anchors.append(
                ScoredCandidate(
                    image_id=s.image_id,
                    anchor_score=s.anchor_score,
                    per_caption_scores=s.per_caption_scores,
                    selection="anchor",
                )
            )
    return sorted(anchors, key=lambda s: s.image_id)


def embed_image(
    image_id: str,
    backend: EmbeddingBackend,
    cache: EmbeddingCache | None = None,
    data: bytes | None = None,
) -> np.ndarray:
    """Embed one image, via the cache when provided.

    When raw bytes are handed over they are decode-checked first, so an
    undecodable image raises EmbeddingInputError before any backend call.
    """
    if data is not None:
        decode_pixels(data)
    if cache is not None:
        return cache.get_or_compute(backend, image_id)
    return backend.embed(image_id)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Row-normalize so cosine reduces to a dot product in indexes."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cannot normalize a zero vector")
    return vectors / norms


def expand_similar(
    anchors: list[ScoredCandidate],
    scored: list[ScoredCandidate],
    backend: EmbeddingBackend,
    cfg: ThresholdConfig,
    cache: EmbeddingCache | None = None,
) -> list[ScoredCandidate]:
    """Non-anchor candidates whose best anchor similarity meets tau_sim.

    Anchors themselves are excluded here — they join the final set via
    the union. An empty anchor set expands to nothing.
    """
    anchor_ids = {a.image_id for a in anchors}
    scored_ids = {s.image_id for s in scored}
    if not anchor_ids <= scored_ids:
        raise ValidationError("anchors must be a subset of the scored candidates")
    if not anchor_ids:
        return []
    cache = cache or EmbeddingCache()
    anchor_vecs = [cache.get_or_compute(backend, a) for a in sorted(anchor_ids)]
    expanded = []
    for s in scored:
        if s.image_id in anchor_ids or s.selection == "score_failed":
            continue
        vec = cache.get_or_compute(backend, s.image_id)
        best = max(cosine_similarity(av, vec) for av in anchor_vecs)
        if best >= cfg.tau_sim:
            expanded.append(
                ScoredCandidate(
                    image_id=s.image_id,
                    anchor_score=s.anchor_score,
                    per_caption_scores=s.per_caption_scores,
                    selection="similarity_expanded",
                )
            )
    return sorted(expanded, key=lambda s: s.image_id)


def finalize_set(anchors: list[ScoredCandidate], expanded: list[ScoredCandidate]) -> list[str]:
    """Union of anchor and expanded ids, duplicate-free, sorted."""
    anchor_ids = {a.image_id for a in anchors}
    expanded_ids = {e.image_id for e in expanded}
    overlap = anchor_ids & expanded_ids
    if overlap:
        logger.warning("finalize_set: %d ids appear in both inputs", len(overlap))
    return sorted(anchor_ids | expanded_ids)


def segment_images(
    final_ids: list[str],
    segmenter: SegmenterBackend,
    cfg: ThresholdConfig,
    store: ContentStore,
) -> list[Segment]:
    """Cut confident regions out of each final image and store the crops.

    Boxes below the segmentation threshold are dropped; boxes leaking
    past the image bounds are clipped and flagged. A segmenter failure
    keeps the original image with no segments. Originals always remain
    in the store alongside their segments.
    """
    segments = []
    for image_id in sorted(final_ids):
        data = store.get(image_id)
        _, width, height = probe_image(data)
        try:
            boxes = segmenter.segment(image_id, width, height)
        except Exception as exc:  # noqa: BLE001 - degrade to no segments
            logger.warning("segmenter failed on %s: %s; keeping original only", image_id[:12], exc)
            continue
        for box in boxes:
            confidence = float(box["confidence"])
            if confidence < cfg.seg_threshold:
                continue
            raw = (int(box["x"]), int(box["y"]), int(box["w"]), int(box["h"]))
            try:
                clipped_box, was_clipped = clip_box(raw, width, height)
            except ValidationError as exc:
                logger.warning("segment box dropped on %s: %s", image_id[:12], exc)
                continue
            if was_clipped:
                logger.warning("segment box %s clipped to bounds on %s", raw, image_id[:12])
            crop = crop_to_png(data, clipped_box)
            segment_id = store.put(
                crop,
                meta={
                    "format": "PNG",
                    "width_px": clipped_box[2],
                    "height_px": clipped_box[3],
                    "parent_image_id": image_id,
                    "bounding_box": list(clipped_box),
                },
            )
            segments.append(
                Segment(
                    segment_id=segment_id,
                    parent_image_id=image_id,
                    bounding_box=clipped_box,
                    confidence=confidence,
                )
            )
    return sorted(segments, key=lambda s: (s.parent_image_id, s.segment_id))
