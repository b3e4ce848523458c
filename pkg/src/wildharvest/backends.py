"""Model-backend clients with deterministic ``mock:`` routing.

Every stage talks to its backend through one of these thin clients. An
endpoint starting with ``mock:`` routes to an offline implementation:
bare ``mock:`` gives a pure hash-derived deterministic backend, while
``mock:<path>`` loads a fixture map from disk. ``http(s)://`` endpoints
speak the JSON-POST wire contracts documented per client.

The mock formulas below are part of the tested surface — golden values
in the test suite are derived from them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BackendUnavailable,
    ExtractionSchemaError,
    JobRejected,
    ValidationError,
)

logger = logging.getLogger(__name__)

_RETRIES = 3
_BACKOFF_S = 1.0


def is_mock(endpoint: str) -> bool:
    return endpoint.startswith("mock:")


def mock_ref(endpoint: str) -> str:
    """The part after ``mock:`` — a fixture path or a mode flag."""
    return endpoint[len("mock:"):]


def _hash_bytes(*parts: str) -> bytes:
    return hashlib.sha256("\x1f".join(parts).encode()).digest()


def _hash_uniform(*parts: str) -> float:
    """Deterministic uniform in [0, 1) derived from the argument strings."""
    return int(_hash_bytes(*parts).hex()[:12], 16) / float(16**12)


def _post_json(endpoint: str, payload: dict, timeout: float = 30.0) -> dict:
    import time

    import requests

    last: Exception | None = None
    for attempt in range(_RETRIES):
        try:
            resp = requests.post(endpoint, json=payload, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:  # noqa: BLE001 - classified below
            last = exc
            if attempt < _RETRIES - 1:
                time.sleep(_BACKOFF_S * (2**attempt))
    raise BackendUnavailable(f"backend {endpoint} unreachable: {last}") from last


def _load_fixture_map(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise BackendUnavailable(f"mock fixture map missing: {path}") from exc


@dataclass(frozen=True)
class TextModelBackend:
    """LLM used for article information extraction.

    Wire contract: POST {prompt, input} -> {relevant, captions[], image_urls[]}.
    Mock: ``mock:<path>`` maps article_id -> that response record; articles
    absent from the map are reported irrelevant.
    """

    backend_name: str
    endpoint: str
    model_id: str = "default"
    temperature: float = 0.0  # pinned; extraction must be reproducible

    def extract(self, article_id: str, prompt: str, body_text: str) -> dict:
        if is_mock(self.endpoint):
            ref = mock_ref(self.endpoint)
            table = _load_fixture_map(ref) if ref else {}
            rec = table.get(article_id, {"relevant": False, "captions": [], "image_urls": []})
            return rec
        return _post_json(self.endpoint, {"prompt": prompt, "input": body_text})


@dataclass(frozen=True)
class ImageTextScorerBackend:
    """VLM producing image-caption alignment scores in [0, 1].

    Scores are elicited on a 0-100 integer scale and normalized.
    Wire contract: POST {image, caption, prompt} -> {score}.
    Mock formula (bare ``mock:``):
        score(image_id, caption) = (first 8 hex chars of
        sha256("score" 0x1f image_id 0x1f caption) as int) % 101 / 100
    ``mock:<path>`` loads {image_id: {caption: score}}; a missing entry
    raises, exercising the per-image score-failure path.
    """

    backend_name: str
    endpoint: str

    def score(self, image_id: str, caption: str, prompt: str) -> float:
        if is_mock(self.endpoint):
            ref = mock_ref(self.endpoint)
            if ref:
                table = _load_fixture_map(ref)
                try:
                    raw = table[image_id][caption]
                except KeyError as exc:
                    raise BackendUnavailable(
                        f"mock scorer has no entry for ({image_id[:12]}, {caption!r})"
                    ) from exc
                return float(raw)
            value = int(_hash_bytes("score", image_id, caption).hex()[:8], 16) % 101
            return value / 100.0
        resp = _post_json(self.endpoint, {"image": image_id, "caption": caption, "prompt": prompt})
        return min(1.0, max(0.0, float(resp["score"])))


@dataclass(frozen=True)
class EmbeddingBackend:
    """Image encoder returning fixed-dimension vectors.

    Wire contract: POST {image} -> {vector}.
    Mock formula: the first ``dim`` bytes of the image's content hash,
    each scaled to [-1, 1] via b / 127.5 - 1. The mock therefore
    supports dim <= 32 (sha256 digest length).
    """

    backend_name: str
    endpoint: str
    dim: int = 16
    model_version: str = "v1"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError("embedding dim must be a positive integer")
        if is_mock(self.endpoint) and self.dim > 32:
            raise ValidationError("mock embedder supports dim <= 32")

    def embed(self, image_id: str) -> np.ndarray:
        if is_mock(self.endpoint):
            raw = bytes.fromhex(image_id) if _is_hex(image_id) else _hash_bytes("embed", image_id)
            vec = np.frombuffer(raw[: self.dim], dtype=np.uint8).astype(np.float64)
            return vec / 127.5 - 1.0
        resp = _post_json(self.endpoint, {"image": image_id})
        vec = np.asarray(resp["vector"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValidationError(
                f"backend {self.backend_name} returned dim {vec.shape}, expected ({self.dim},)"
            )
        return vec


def _is_hex(s: str) -> bool:
    return len(s) % 2 == 0 and all(c in "0123456789abcdef" for c in s)


@dataclass(frozen=True)
class SegmenterBackend:
    """Open-vocabulary region segmenter.

    Wire contract: POST {image, queries} -> {boxes: [{x, y, w, h, confidence}]}.
    Mock formula (bare ``mock:``), from d = sha256("segment" 0x1f image_id):
        n_boxes     = d[0] % 3
        for box i (stride 8): x = d[8i+1]/255 * 0.5 * W
                              y = d[8i+2]/255 * 0.5 * H
                              w = (0.25 + d[8i+3]/255 * 0.5) * W
                              h = (0.25 + d[8i+4]/255 * 0.5) * H
                              confidence = d[8i+5] / 255
    Boxes may overflow the image on purpose; callers clip. ``mock:<path>``
    loads {image_id: [box records]}.
    """

    backend_name: str
    endpoint: str
    query_vocabulary: tuple[str, ...] = ("photo", "image", "picture")

    def segment(self, image_id: str, width: int, height: int) -> list[dict]:
        if is_mock(self.endpoint):
            ref = mock_ref(self.endpoint)
            if ref:
                return list(_load_fixture_map(ref).get(image_id, []))
            d = _hash_bytes("segment", image_id)
            boxes = []
            for i in range(d[0] % 3):
                base = 8 * i
                boxes.append(
                    {
                        "x": int(d[base + 1] / 255 * 0.5 * width),
                        "y": int(d[base + 2] / 255 * 0.5 * height),
                        "w": max(1, int((0.25 + d[base + 3] / 255 * 0.5) * width)),
                        "h": max(1, int((0.25 + d[base + 4] / 255 * 0.5) * height)),
                        "confidence": d[base + 5] / 255,
                    }
                )
            return boxes
        resp = _post_json(
            self.endpoint,
            {"image": image_id, "queries": list(self.query_vocabulary)},
        )
        return list(resp["boxes"])


@dataclass(frozen=True)
class TrainerBackend:
    """External detector trainer; the pipeline only emits jobs to it.

    Wire contract: POST {manifest_id, manifest_hash, hyperparameters}
    -> {job_id, accepted}. The mock appends accepted jobs to a JSONL
    ledger file (``ledger_path`` or ``mock:<path>``); ``mock:reject``
    refuses every job.
    """

    backend_name: str
    endpoint: str
    ledger_path: str | None = None

    def submit(self, round_t: int, manifest_id: str, manifest_hash: str,
               hyperparameters: dict) -> str:
        payload = {
            "manifest_id": manifest_id,
            "manifest_hash": manifest_hash,
            "hyperparameters": hyperparameters,
            "round": round_t,
        }
        if is_mock(self.endpoint):
            ref = mock_ref(self.endpoint)
            if ref == "reject":
                raise JobRejected(f"trainer {self.backend_name} rejected round {round_t} job")
            ledger = Path(self.ledger_path or ref) if (self.ledger_path or ref) else None
            seq = 0
            if ledger is not None and ledger.exists():
                seq = sum(
                    1
                    for line in ledger.read_text().splitlines()
                    if line.strip() and json.loads(line)["round"] == round_t
                )
            job_id = f"job-t{round_t}-{seq:03d}"
            if ledger is not None:
                ledger.parent.mkdir(parents=True, exist_ok=True)
                with ledger.open("a") as f:
                    f.write(json.dumps({**payload, "job_id": job_id}, sort_keys=True) + "\n")
            return job_id
        resp = _post_json(self.endpoint, payload)
        if not resp.get("accepted"):
            raise JobRejected(str(resp.get("message", "trainer refused the job")))
        return str(resp["job_id"])


@dataclass(frozen=True)
class DetectorBackend:
    """Score provider for evaluation runs.

    Real deployments read detector score files; the mock synthesizes a
    plausibly separable detector so report machinery can be exercised:
        score(image_id, label) = u * 0.7 + 0.3 * label,
        u = hash_uniform("detect", image_id)
    """

    backend_name: str
    endpoint: str

    def score(self, image_id: str, label: int) -> float:
        if is_mock(self.endpoint):
            return _hash_uniform("detect", image_id) * 0.7 + 0.3 * label
        resp = _post_json(self.endpoint, {"image": image_id})
        return min(1.0, max(0.0, float(resp["score"])))


def validate_extraction_response(article_id: str, rec: dict) -> dict:
    """Enforce the strict {relevant, captions[], image_urls[]} schema."""
    if not isinstance(rec, dict):
        raise ExtractionSchemaError(f"article {article_id}: response is not a record")
    missing = {"relevant", "captions", "image_urls"} - set(rec)
    if missing:
        raise ExtractionSchemaError(f"article {article_id}: missing fields {sorted(missing)}")
    if not isinstance(rec["relevant"], bool):
        raise ExtractionSchemaError(f"article {article_id}: relevant must be boolean")
    for key in ("captions", "image_urls"):
        if not isinstance(rec[key], list) or not all(isinstance(v, str) for v in rec[key]):
            raise ExtractionSchemaError(f"article {article_id}: {key} must be a list of strings")
    if rec["relevant"] and not rec["captions"]:
        raise ExtractionSchemaError(
            f"article {article_id}: backend claims relevance with zero captions"
        )
    return rec
