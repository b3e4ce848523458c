"""Semantically aligned real-fake pairing via TopK retrieval.

Each fake retrieves its most similar reals from the pool; under global
no-replacement a real feeds at most one fake, assigned greedily in
ascending fake-id order so the result is reproducible without a seed.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import EmptyPoolError, PairExhaustionError, ValidationError
from .retrieval import l2_normalize
from .types import Pair

logger = logging.getLogger(__name__)


class RealPoolIndex:
    """The real pool as an exact-search index plus assignment state.

    Embeddings are L2-normalized at ingestion so cosine similarity is a
    dot product. ``consumed`` tracks reals already granted to a fake.
    """

    def __init__(self, entries: list[tuple[str, np.ndarray]]):
        if entries:
            dims = {np.asarray(v).shape for _, v in entries}
            if len(dims) != 1:
                raise ValidationError(f"pool embeddings disagree on dimension: {dims}")
        self.ids: list[str] = [image_id for image_id, _ in entries]
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("pool contains duplicate image ids")
        self.matrix = (
            l2_normalize(np.stack([np.asarray(v, dtype=np.float64) for _, v in entries]))
            if entries
            else np.zeros((0, 0))
        )
        self.consumed: set[str] = set()

    def __len__(self) -> int:
        return len(self.ids)

    def similarities(self, fake_vec: np.ndarray) -> np.ndarray:
        """Cosine similarity of one fake against every pool entry."""
        q = l2_normalize(np.asarray(fake_vec, dtype=np.float64))
        return self.matrix @ q


def topk_matches(
    fake_vec: np.ndarray,
    idx: RealPoolIndex,
    k: int,
) -> list[tuple[str, float]]:
    """Top k reals by cosine similarity, ties broken by ascending id.

    Requesting more than the pool holds returns the whole pool sorted.
    """
    if len(idx) == 0:
        raise EmptyPoolError("TopK retrieval against an empty pool")
    if k < 1:
        raise ValidationError("k must be a positive integer")
    sims = idx.similarities(fake_vec)
    order = sorted(range(len(idx)), key=lambda i: (-sims[i], idx.ids[i]))
    return [(idx.ids[i], float(sims[i])) for i in order[:k]]


def assign_pairs(
    fakes: list[tuple[str, np.ndarray]],
    idx: RealPoolIndex,
    k: int = 500,
    reals_per_fake: int = 1,
    global_without_replacement: bool = True,
) -> list[Pair]:
    """Match every fake with its m most similar unconsumed reals.

    Fakes are processed in ascending image_id order. Under global
    no-replacement, a consumed real is unavailable to later fakes and a
    fake whose whole TopK list is consumed raises PairExhaustionError
    (raise k or grow the pool). With the per-fake reading each fake
    matches independently.
    """
    if reals_per_fake < 1:
        raise ValidationError("reals_per_fake must be a positive integer")
    if global_without_replacement and len(idx) < reals_per_fake * len(fakes):
        raise ValidationError(
            f"pool of {len(idx)} cannot supply {reals_per_fake} reals for "
            f"{len(fakes)} fakes without replacement"
        )
    by_id = dict(fakes)
    if len(by_id) != len(fakes):
        raise ValidationError("duplicate fake ids in pairing input")
    pairs = []
    for fake_id in sorted(by_id):
        ranked = topk_matches(by_id[fake_id], idx, k)
        chosen: list[tuple[str, float]] = []
        for real_id, sim in ranked:
            if global_without_replacement and real_id in idx.consumed:
                continue
            chosen.append((real_id, sim))
            if len(chosen) == reals_per_fake:
                break
        if len(chosen) < reals_per_fake:
            raise PairExhaustionError(fake_id, k)
        if global_without_replacement:
            idx.consumed.update(real_id for real_id, _ in chosen)
        pairs.append(
            Pair(
                fake_id=fake_id,
                real_ids=tuple(r for r, _ in chosen),
                similarities=tuple(s for _, s in chosen),
            )
        )
    return pairs
