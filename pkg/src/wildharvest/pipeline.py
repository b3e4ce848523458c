"""End-to-end runs: config, stage chaining, memoization, run ledger.

A run is fully determined by (corpus, config, seeds): stage outputs are
canonical files under the manifests directory, every output is stamped
with the config fingerprint, and an append-only ledger records which
fingerprint produced what. Completed stages are skipped on rerun when
their recorded outputs still match (content-hash memoization).
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from types import SimpleNamespace

from .backends import (
    DetectorBackend,
    EmbeddingBackend,
    ImageTextScorerBackend,
    SegmenterBackend,
    TextModelBackend,
    TrainerBackend,
)
from .errors import (
    ConcurrentRunError,
    EmptyCandidateSet,
    ExtractionSchemaError,
    MissingInputError,
    StaleCacheError,
    ValidationError,
)
from .extraction import extract_article, get_template
from .ingestion import SourceAdapter, collect_candidate_images, fetch_articles, fetch_real_pool
from .manifest import (
    atomic_write_bytes,
    canonical_json,
    config_hash,
    format_score,
    read_manifest,
    read_records,
    write_manifest,
    write_records,
)
from .pairing import RealPoolIndex, assign_pairs
from .retrieval import (
    EmbeddingCache,
    expand_similar,
    finalize_set,
    score_candidates,
    segment_images,
    select_anchors,
)
from .scheduler import (
    assemble_round,
    emit_training_job,
    gen_entries_for_window,
    partition_timeline,
    sample_replay,
    subsample_portion,
)
from .store import ContentStore, hash_content
from .types import (
    DatasetEntry,
    DatasetManifest,
    ScoreRecord,
    ThresholdConfig,
    UpdateRound,
    parse_date,
)
from .evaluation import build_report, report_to_json, render_table, write_score_records

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "extract", "score", "expand", "segment", "pair",
               "assemble", "emit", "eval")

_STAGE_NEEDS = {
    "ingest": (),
    "extract": ("articles.jsonl",),
    "score": ("extraction.jsonl", "candidates.jsonl"),
    "expand": ("scored.jsonl",),
    "segment": ("final_sets.jsonl",),
    "pair": ("final_sets.jsonl", "segments.jsonl", "realpool.jsonl"),
    "assemble": ("articles.jsonl", "extraction.jsonl", "final_sets.jsonl",
                 "segments.jsonl", "pairs.jsonl", "realpool.jsonl"),
    "emit": ("rounds.json",),
    "eval": ("rounds.json",),
}

_BACKEND_STAGES = ("extractor", "scorer", "embedder", "segmenter", "trainer", "detector")


@dataclass
class RunConfig:
    """Everything a run needs; hashable as a canonical JSON document."""

    raw: dict
    base_dir: Path
    run_date: date
    date_range: tuple[date, date]
    query: str
    thresholds: ThresholdConfig
    timeline: dict
    paths: dict
    backends: dict
    adapters: dict
    seeds: dict
    options: dict
    fingerprint: str = ""

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "RunConfig":
        base = Path(base_dir)
        thresholds = ThresholdConfig(**raw.get("thresholds", {}))
        timeline = dict(raw.get("timeline", {}))
        if "anchor_date" not in timeline:
            raise ValidationError("config timeline needs an anchor_date")
        paths = dict(raw.get("paths", {}))
        for key in ("store", "manifests", "corpus"):
            if key not in paths:
                raise ValidationError(f"config paths needs {key!r}")
        backends = dict(raw.get("backends", {}))
        missing = [s for s in _BACKEND_STAGES if s not in backends]
        if missing:
            raise ValidationError(f"config backends missing {missing}")
        adapters = raw.get("adapters", {})
        if "articles" not in adapters or not adapters.get("real_pool"):
            raise ValidationError("config adapters need 'articles' and a 'real_pool' list")
        dr = raw.get("date_range", {})
        cfg = cls(
            raw=raw,
            base_dir=base,
            run_date=parse_date(raw.get("run_date", "2026-01-01")),
            date_range=(parse_date(dr.get("from", "1970-01-01")),
                        parse_date(dr.get("to", "2999-12-31"))),
            query=raw.get("query", ""),
            thresholds=thresholds,
            timeline=timeline,
            paths=paths,
            backends=backends,
            adapters=adapters,
            seeds=dict(raw.get("seeds", {})),
            options=dict(raw.get("options", {})),
        )
        # output locations don't affect output content, so they stay out
        # of the fingerprint stamped into manifests
        cfg.fingerprint = config_hash({k: v for k, v in raw.items() if k != "paths"})
        return cfg

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        """Load a config file, applying dotted-path flag overrides
        (flags > file > defaults)."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        for key, value in (overrides or {}).items():
            node = raw
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
        return cls.from_dict(raw, base_dir=path.parent)

    def resolve(self, key: str) -> Path:
        value = os.environ.get("WILDHARVEST_STORE") if key == "store" else None
        value = value or self.paths[key]
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def manifests_dir(self) -> Path:
        return self.resolve("manifests")

    def adapter(self, section: str) -> SourceAdapter:
        return self.build_adapter(self.adapters[section])

    def real_pool_adapters(self) -> list[SourceAdapter]:
        return [self.build_adapter(spec) for spec in self.adapters["real_pool"]]

    def build_adapter(self, spec: dict) -> SourceAdapter:
        spec = dict(spec)
        spec["endpoint"] = str(self.resolve_ref(spec["endpoint"]))
        if not spec.get("auth"):
            env_key = "WILDHARVEST_" + spec["adapter_name"].upper().replace("-", "_") + "_TOKEN"
            spec["auth"] = os.environ.get(env_key)
        return SourceAdapter(**spec)

    def resolve_ref(self, value: str) -> str:
        """Resolve a config path against the config file directory;
        URLs and mock schemes pass through untouched."""
        if value.startswith(("http://", "https://", "mock:")):
            return value
        p = Path(value)
        return str(p if p.is_absolute() else self.base_dir / p)

    def backend_endpoint(self, stage: str) -> str:
        endpoint = self.backends[stage]["endpoint"]
        if endpoint.startswith("mock:"):
            ref = endpoint[len("mock:"):]
            if ref and ref != "reject":
                return "mock:" + self.resolve_ref(ref)
        return endpoint


class _StoreLock:
    """One pipeline run per store directory, via an O_EXCL lock file."""

    def __init__(self, store_dir: Path):
        self.path = store_dir / ".wildharvest.lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise ConcurrentRunError(
                f"store locked by another run ({self.path}); remove the lock "
                "file if that run is dead"
            ) from exc
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


@dataclass
class _RunContext:
    config: RunConfig
    store: ContentStore
    out: Path

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, stage: str, names: tuple[str, ...]):
        missing = [n for n in names if not self.path(n).exists()]
        if missing:
            raise MissingInputError(
                f"stage {stage!r} is missing upstream outputs: {missing}"
            )


def _ledger_path(out: Path) -> Path:
    return out / "run_ledger.jsonl"


def _ledger_records(out: Path) -> list[dict]:
    path = _ledger_path(out)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _ledger_append(out: Path, record: dict):
    path = _ledger_path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as f:
        f.write(canonical_json(record) + "\n")


def _hash_outputs(out: Path, names: list[str]) -> dict:
    return {name: hash_content((out / name).read_bytes()) for name in sorted(names)}


def run_pipeline(config: RunConfig, stages: list[str], force: bool = False) -> list[dict]:
    """Run a contiguous chain of stages; returns the ledger records added.

    Completed stages whose recorded outputs still match the current
    config fingerprint are cache hits and do no work. Outputs from a
    different fingerprint raise StaleCacheError unless forced.
    """
    if not stages:
        raise ValidationError("no stages requested")
    unknown = [s for s in stages if s not in STAGE_ORDER]
    if unknown:
        raise ValidationError(f"unknown stages {unknown}")
    indices = sorted(STAGE_ORDER.index(s) for s in stages)
    if indices != list(range(indices[0], indices[-1] + 1)):
        raise ValidationError(
            f"stages must form a contiguous chain of {STAGE_ORDER}; got {stages}"
        )
    ordered = [STAGE_ORDER[i] for i in indices]

    out = config.manifests_dir
    out.mkdir(parents=True, exist_ok=True)
    store = ContentStore(config.resolve("store"))
    ctx = _RunContext(config=config, store=store, out=out)
    stage_fns = {
        "ingest": _stage_ingest,
        "extract": _stage_extract,
        "score": _stage_score,
        "expand": _stage_expand,
        "segment": _stage_segment,
        "pair": _stage_pair,
        "assemble": _stage_assemble,
        "emit": _stage_emit,
        "eval": _stage_eval,
    }
    added: list[dict] = []
    with _StoreLock(config.resolve("store")):
        history = _ledger_records(out)
        seq = len(history)
        latest = {}
        for rec in history:
            latest[rec["stage"]] = rec
        for stage in ordered:
            ctx.need(stage, _STAGE_NEEDS[stage])
            prior = latest.get(stage)
            if prior is not None:
                outputs = prior.get("outputs", {})
                intact = outputs and all(
                    (out / name).exists()
                    and hash_content((out / name).read_bytes()) == digest
                    for name, digest in outputs.items()
                )
                if intact and prior["config_hash"] == config.fingerprint:
                    seq += 1
                    rec = {
                        "seq": seq,
                        "stage": stage,
                        "config_hash": config.fingerprint,
                        "outputs": outputs,
                        "cache_hit": True,
                    }
                    _ledger_append(out, rec)
                    added.append(rec)
                    latest[stage] = rec
                    logger.info("stage %s: cache hit", stage)
                    continue
                if intact and prior["config_hash"] != config.fingerprint and not force:
                    raise StaleCacheError(
                        f"stage {stage!r} outputs were produced under config "
                        f"{prior['config_hash'][:12]}, current is "
                        f"{config.fingerprint[:12]}; rerun with --force"
                    )
            made = stage_fns[stage](ctx)
            seq += 1
            rec = {
                "seq": seq,
                "stage": stage,
                "config_hash": config.fingerprint,
                "inputs": _hash_outputs(out, list(_STAGE_NEEDS[stage])),
                "outputs": _hash_outputs(out, made),
                "cache_hit": False,
            }
            _ledger_append(out, rec)
            added.append(rec)
            latest[stage] = rec
            logger.info("stage %s: wrote %d outputs", stage, len(made))
    return added


# -- stage implementations -------------------------------------------------

def _stage_ingest(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    articles = fetch_articles(
        cfg.adapter("articles"), cfg.query, cfg.date_range, fetch_date=cfg.run_date
    )
    write_records(
        ctx.path("articles.jsonl"),
        [
            {
                "article_id": a.article_id,
                "source_url": a.source_url,
                "source_name": a.source_name,
                "published_at": a.published_at.isoformat(),
                "body_text": a.body_text,
                "image_urls": list(a.raw_image_urls),
                "date_inferred": a.date_inferred,
            }
            for a in articles
        ],
    )
    pool = fetch_real_pool(cfg.real_pool_adapters(), cfg.date_range, ctx.store, cfg.query)
    write_records(
        ctx.path("realpool.jsonl"),
        [
            {
                "image_id": r.image_id,
                "source": r.source,
                "outlet": r.outlet,
                "published_at": r.published_at.isoformat(),
            }
            for r in pool.images
        ],
        header={"kind": "realpool-header", "per_source_counts": pool.per_source_counts},
    )
    return ["articles.jsonl", "realpool.jsonl"]


def _read_articles(ctx: _RunContext):
    from .types import Article

    out = []
    for rec in read_records(ctx.path("articles.jsonl")):
        out.append(
            Article(
                article_id=rec["article_id"],
                source_url=rec["source_url"],
                source_name=rec["source_name"],
                published_at=date.fromisoformat(rec["published_at"]),
                body_text=rec["body_text"],
                raw_image_urls=tuple(rec["image_urls"]),
                date_inferred=bool(rec.get("date_inferred")),
            )
        )
    return out


def _stage_extract(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    backend = TextModelBackend(
        backend_name=cfg.backends["extractor"].get("name", "extractor"),
        endpoint=cfg.backend_endpoint("extractor"),
        model_id=cfg.backends["extractor"].get("model_id", "default"),
    )
    p1 = get_template(cfg.options.get("template_p1", "p1@v1"))
    word_budget = int(cfg.options.get("word_budget", 8000))
    adapter = cfg.adapter("articles")
    extraction_rows = []
    candidate_rows = []
    for article in sorted(_read_articles(ctx), key=lambda a: a.article_id):
        try:
            descriptions, merged = extract_article(article, p1, backend, word_budget)
        except ExtractionSchemaError as exc:
            logger.warning("quarantining article %s: %s", article.article_id, exc)
            extraction_rows.append(
                {"article_id": article.article_id, "quarantined": True, "reason": str(exc)}
            )
            continue
        extraction_rows.append(
            {
                "article_id": article.article_id,
                "relevant": descriptions.relevant,
                "captions": list(descriptions.captions),
                "image_urls": list(merged.raw_image_urls),
                "published_at": merged.published_at.isoformat(),
            }
        )
        if not descriptions.relevant:
            continue
        try:
            result = collect_candidate_images(
                merged, adapter, ctx.store, fetch_date=cfg.run_date,
                parallelism=int(cfg.options.get("parallelism", 4)),
            )
        except EmptyCandidateSet as exc:
            logger.warning("article %s flagged: %s", article.article_id, exc)
            extraction_rows[-1]["empty_candidates"] = True
            continue
        for cand in result.candidates:
            candidate_rows.append(
                {
                    "article_id": cand.article_id,
                    "image_id": cand.image_id,
                    "source_url": cand.source_url,
                    "format": cand.format,
                    "width_px": cand.width_px,
                    "height_px": cand.height_px,
                }
            )
        for skip in result.skipped:
            candidate_rows.append(
                {"article_id": article.article_id, "skipped": True, **skip}
            )
    write_records(ctx.path("extraction.jsonl"), extraction_rows)
    write_records(ctx.path("candidates.jsonl"), candidate_rows)
    return ["extraction.jsonl", "candidates.jsonl"]


def _relevant_captions(ctx: _RunContext) -> dict[str, list[str]]:
    out = {}
    for rec in read_records(ctx.path("extraction.jsonl")):
        if rec.get("relevant") and not rec.get("quarantined"):
            out[rec["article_id"]] = rec["captions"]
    return out


def _candidates_by_article(ctx: _RunContext) -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for rec in read_records(ctx.path("candidates.jsonl")):
        if rec.get("skipped"):
            continue
        grouped.setdefault(rec["article_id"], []).append(rec)
    return grouped


def _stage_score(ctx: _RunContext) -> list[str]:
    from .types import CandidateImage, DescriptionSet, utc_timestamp

    cfg = ctx.config
    scorer = ImageTextScorerBackend(
        backend_name=cfg.backends["scorer"].get("name", "scorer"),
        endpoint=cfg.backend_endpoint("scorer"),
    )
    p2 = get_template(cfg.options.get("template_p2", "p2@v1"))
    captions = _relevant_captions(ctx)
    candidates = _candidates_by_article(ctx)
    rows = []
    for article_id in sorted(captions):
        cands = [
            CandidateImage(
                image_id=rec["image_id"],
                article_id=article_id,
                source_url=rec["source_url"],
                format=rec["format"],
                width_px=rec["width_px"],
                height_px=rec["height_px"],
                fetched_at=utc_timestamp(cfg.run_date),
            )
            for rec in candidates.get(article_id, [])
        ]
        if not cands:
            continue
        descriptions = DescriptionSet(
            article_id=article_id, captions=tuple(captions[article_id]), relevant=True
        )
        scored = score_candidates(cands, descriptions, p2, scorer)
        anchor_ids = {a.image_id for a in select_anchors(scored, cfg.thresholds)}
        for s in scored:
            rows.append(
                {
                    "article_id": article_id,
                    "image_id": s.image_id,
                    "anchor_score": format_score(s.anchor_score),
                    "per_caption_scores": [format_score(v) for v in s.per_caption_scores],
                    "selection": "anchor" if s.image_id in anchor_ids else s.selection,
                }
            )
    write_records(ctx.path("scored.jsonl"), rows)
    return ["scored.jsonl"]


def _scored_by_article(ctx: _RunContext) -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for rec in read_records(ctx.path("scored.jsonl")):
        grouped.setdefault(rec["article_id"], []).append(rec)
    return grouped


def _stage_expand(ctx: _RunContext) -> list[str]:
    from .types import ScoredCandidate

    cfg = ctx.config
    embedder = _embedder(cfg)
    cache = EmbeddingCache()
    rows = []
    grouped = _scored_by_article(ctx)
    for article_id in sorted(grouped):
        scored = [
            ScoredCandidate(
                image_id=rec["image_id"],
                anchor_score=rec["anchor_score"],
                per_caption_scores=tuple(rec["per_caption_scores"]),
                selection=rec["selection"],
            )
            for rec in grouped[article_id]
        ]
        anchors = [s for s in scored if s.selection == "anchor"]
        expanded = expand_similar(anchors, scored, embedder, cfg.thresholds, cache)
        by_id = {s.image_id: s for s in anchors + expanded}
        for image_id in finalize_set(anchors, expanded):
            rows.append(
                {
                    "article_id": article_id,
                    "image_id": image_id,
                    "selection": by_id[image_id].selection,
                }
            )
    write_records(ctx.path("final_sets.jsonl"), rows)
    return ["final_sets.jsonl"]


def _embedder(cfg: RunConfig) -> EmbeddingBackend:
    spec = cfg.backends["embedder"]
    return EmbeddingBackend(
        backend_name=spec.get("name", "embedder"),
        endpoint=cfg.backend_endpoint("embedder"),
        dim=int(spec.get("dim", 16)),
        model_version=spec.get("model_version", "v1"),
    )


def _stage_segment(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    segmenter = SegmenterBackend(
        backend_name=cfg.backends["segmenter"].get("name", "segmenter"),
        endpoint=cfg.backend_endpoint("segmenter"),
        query_vocabulary=tuple(
            cfg.backends["segmenter"].get("query_vocabulary", ("photo", "image", "picture"))
        ),
    )
    finals = read_records(ctx.path("final_sets.jsonl"))
    by_article: dict[str, list[str]] = {}
    for rec in finals:
        by_article.setdefault(rec["article_id"], []).append(rec["image_id"])
    rows = []
    for article_id in sorted(by_article):
        for seg in segment_images(by_article[article_id], segmenter, cfg.thresholds, ctx.store):
            rows.append(
                {
                    "article_id": article_id,
                    "segment_id": seg.segment_id,
                    "parent_image_id": seg.parent_image_id,
                    "bounding_box": list(seg.bounding_box),
                    "confidence": format_score(seg.confidence),
                }
            )
    write_records(ctx.path("segments.jsonl"), rows)
    return ["segments.jsonl"]


def _fake_units(ctx: _RunContext) -> dict[str, dict]:
    """Pairing units: segments when present, originals otherwise."""
    cfg = ctx.config
    finals = read_records(ctx.path("final_sets.jsonl"))
    segments = read_records(ctx.path("segments.jsonl"))
    pair_segments = bool(cfg.options.get("pair_segments", True))
    segs_by_parent: dict[str, list[dict]] = {}
    for seg in segments:
        segs_by_parent.setdefault(seg["parent_image_id"], []).append(seg)
    units: dict[str, dict] = {}
    for rec in finals:
        image_id, article_id = rec["image_id"], rec["article_id"]
        children = segs_by_parent.get(image_id, []) if pair_segments else []
        if children:
            for seg in children:
                units[seg["segment_id"]] = {
                    "article_id": article_id,
                    "parent_image_id": image_id,
                }
        else:
            units.setdefault(image_id, {"article_id": article_id, "parent_image_id": None})
    return units


def _stage_pair(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    embedder = _embedder(cfg)
    cache = EmbeddingCache()
    pool_records = [
        rec for rec in read_records(ctx.path("realpool.jsonl"))
        if rec.get("kind") != "realpool-header"
    ]
    idx = RealPoolIndex(
        [
            (rec["image_id"], cache.get_or_compute(embedder, rec["image_id"]))
            for rec in sorted(pool_records, key=lambda r: r["image_id"])
        ]
    )
    units = _fake_units(ctx)
    fakes = [
        (unit_id, cache.get_or_compute(embedder, unit_id)) for unit_id in sorted(units)
    ]
    pairs = assign_pairs(
        fakes,
        idx,
        k=cfg.thresholds.top_k,
        reals_per_fake=int(cfg.options.get("reals_per_fake", 1)),
        global_without_replacement=bool(cfg.options.get("global_without_replacement", True)),
    )
    rows = []
    for pair in pairs:
        for real_id, sim in zip(pair.real_ids, pair.similarities):
            rows.append(
                {
                    "fake_id": pair.fake_id,
                    "real_id": real_id,
                    "similarity": format_score(sim),
                    "article_id": units[pair.fake_id]["article_id"],
                }
            )
    write_records(ctx.path("pairs.jsonl"), rows)
    return ["pairs.jsonl"]


def _load_registry(ctx: _RunContext):
    """Load the generator registry, ingesting any listed image files.

    Rows may carry ``image_files`` (paths relative to the registry
    file); their bytes go into the content store and the resulting
    hashes become the row's image ids for split bookkeeping.
    """
    from .images import probe_image
    from .scheduler import registry_from_dict

    cfg = ctx.config
    registry_path = cfg.paths.get("registry")
    if not registry_path:
        return None
    resolved = Path(cfg.resolve_ref(registry_path))
    try:
        payload = json.loads(resolved.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read registry {resolved}: {exc}") from exc
    base = resolved.parent
    for row in payload.get("generators", []):
        files = row.get("image_files")
        if not files or row.get("image_ids"):
            continue
        ids = []
        for rel in files:
            data = (base / rel).read_bytes()
            fmt, width, height = probe_image(data)
            ids.append(
                ctx.store.put(
                    data,
                    meta={
                        "format": fmt,
                        "width_px": width,
                        "height_px": height,
                        "generator": row["name"],
                        "source_urls": [f"registry:{rel}"],
                    },
                )
            )
        row["image_ids"] = ids
    return registry_from_dict(payload, seed=int(cfg.seeds.get("registry", 0)))


def _timeline_windows(cfg: RunConfig, dates: list[date] = ()) -> list[UpdateRound]:
    """Windows from config; without num_windows, span the given dates."""
    timeline = cfg.timeline
    probes = [
        SimpleNamespace(event_date=d, image_id=f"probe-{i}") for i, d in enumerate(dates)
    ]
    return partition_timeline(
        probes,
        anchor_date=parse_date(timeline["anchor_date"]),
        interval_months=int(timeline.get("interval_months", 3)),
        num_windows=int(timeline["num_windows"]) if timeline.get("num_windows") else None,
    )


def _stage_assemble(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    made: list[str] = []
    registry = _load_registry(ctx)
    reserved = registry.reserved_test_ids() if registry else set()

    article_dates = {
        rec["article_id"]: date.fromisoformat(rec["published_at"])
        for rec in read_records(ctx.path("extraction.jsonl"))
        if not rec.get("quarantined")
    }
    span = sorted(article_dates.values())
    if registry:
        span.extend(row.release_date for row in registry.rows)
    windows = _timeline_windows(cfg, span)
    finals = read_records(ctx.path("final_sets.jsonl"))
    segments = read_records(ctx.path("segments.jsonl"))
    pairs = read_records(ctx.path("pairs.jsonl"))
    pool_dates = {
        rec["image_id"]: date.fromisoformat(rec["published_at"])
        for rec in read_records(ctx.path("realpool.jsonl"))
        if rec.get("kind") != "realpool-header"
    }
    include_originals = bool(cfg.options.get("include_originals", True))

    def window_of(d: date) -> int | None:
        for w in windows:
            if w.contains(d):
                return w.t
        return None

    itw_by_round: dict[int, dict[str, DatasetEntry]] = {w.t: {} for w in windows}
    unit_round: dict[str, int] = {}
    segs_by_parent: dict[str, list[dict]] = {}
    for seg in segments:
        segs_by_parent.setdefault(seg["parent_image_id"], []).append(seg)

    for rec in finals:
        article_id, image_id = rec["article_id"], rec["image_id"]
        event = article_dates[article_id]
        t = window_of(event)
        if t is None:
            logger.warning("article %s dated %s outside the timeline; dropped", article_id, event)
            continue
        children = segs_by_parent.get(image_id, [])
        if include_originals or not children:
            itw_by_round[t].setdefault(
                image_id,
                DatasetEntry(
                    image_id=image_id,
                    label=1,
                    origin="itw",
                    event_date=event,
                    round_introduced=t,
                    provenance=(f"article:{article_id}",),
                ),
            )
            unit_round.setdefault(image_id, t)
        for seg in children:
            itw_by_round[t].setdefault(
                seg["segment_id"],
                DatasetEntry(
                    image_id=seg["segment_id"],
                    label=1,
                    origin="itw",
                    event_date=event,
                    round_introduced=t,
                    parent_image_id=image_id,
                    provenance=(f"article:{article_id}",),
                ),
            )
            unit_round.setdefault(seg["segment_id"], t)

    for rec in pairs:
        t = unit_round.get(rec["fake_id"])
        if t is None:
            continue
        real_id = rec["real_id"]
        itw_by_round[t].setdefault(
            real_id,
            DatasetEntry(
                image_id=real_id,
                label=0,
                origin="real_pool",
                event_date=pool_dates[real_id],
                round_introduced=t,
                provenance=(f"paired-with:{rec['fake_id']}",),
            ),
        )

    rho = cfg.thresholds.replay_rho
    replay_seed = int(cfg.seeds.get("replay", 0))
    assembled: list[DatasetManifest] = []
    round_rows = []
    for w in windows:
        t = w.t
        itw_manifest = DatasetManifest(
            manifest_id=f"itw-round-{t:03d}",
            round=t,
            entries=tuple(itw_by_round[t].values()),
            seed=replay_seed,
            created_at=cfg.run_date,
        )
        gen_entries = gen_entries_for_window(registry, w) if registry else []
        gen_manifest = DatasetManifest(
            manifest_id=f"gen-round-{t:03d}",
            round=t,
            entries=tuple(gen_entries),
            seed=replay_seed,
            created_at=cfg.run_date,
        )
        pool = []
        seen: set[str] = set()
        for earlier in assembled:
            for e in earlier.entries:
                if e.image_id not in seen:
                    seen.add(e.image_id)
                    pool.append(e)
        buffer = sample_replay(pool, rho, replay_seed + t, round_t=t)
        replay_manifest = DatasetManifest(
            manifest_id=f"replay-round-{t:03d}",
            round=t,
            entries=buffer.entries,
            seed=replay_seed + t,
            created_at=cfg.run_date,
        )
        round_manifest = assemble_round(
            itw_manifest,
            gen_manifest,
            replay_manifest,
            t,
            seed=replay_seed,
            created_at=cfg.run_date,
            manifest_id=f"round-{t:03d}",
            reserved_test_ids=reserved,
        )
        portion = float(cfg.options.get("portion", 1.0))
        if portion < 1.0:
            round_manifest = subsample_portion(
                round_manifest, portion, int(cfg.seeds.get("subsample", 0)),
                manifest_id=f"round-{t:03d}",
            )
        assembled.append(round_manifest)
        for m in (itw_manifest, gen_manifest, replay_manifest, round_manifest):
            name = f"{m.manifest_id}.manifest.jsonl"
            write_manifest(ctx.path(name), m, stamp=cfg.fingerprint)
            made.append(name)
        round_rows.append(
            {
                "t": t,
                "window_start": w.window_start.isoformat(),
                "window_end": w.window_end.isoformat(),
                "itw_manifest": itw_manifest.manifest_id,
                "gen_manifest": gen_manifest.manifest_id,
                "replay_manifest": replay_manifest.manifest_id,
                "assembled_manifest": round_manifest.manifest_id,
                "seed": replay_seed,
            }
        )
    atomic_write_bytes(ctx.path("rounds.json"), (canonical_json({"rounds": round_rows}) + "\n").encode())
    made.append("rounds.json")
    return made


def _load_rounds(ctx: _RunContext) -> list[UpdateRound]:
    payload = json.loads(ctx.path("rounds.json").read_text())
    out = []
    for rec in payload["rounds"]:
        out.append(
            UpdateRound(
                t=rec["t"],
                window_start=date.fromisoformat(rec["window_start"]),
                window_end=date.fromisoformat(rec["window_end"]),
                itw_manifest=rec["itw_manifest"],
                gen_manifest=rec["gen_manifest"],
                replay_manifest=rec["replay_manifest"],
                assembled_manifest=rec["assembled_manifest"],
                seed=rec["seed"],
            )
        )
    return out


def _stage_emit(ctx: _RunContext, only_t: int | None = None) -> list[str]:
    cfg = ctx.config
    endpoint = cfg.backend_endpoint("trainer")
    trainer = TrainerBackend(
        backend_name=cfg.backends["trainer"].get("name", "trainer"),
        endpoint=endpoint,
        ledger_path=str(ctx.path("trainer_ledger.jsonl")) if endpoint == "mock:" else None,
    )
    jobs_path = ctx.path("jobs.jsonl")
    ledger_file = ctx.path("trainer_ledger.jsonl")
    if only_t is None:
        # full-stage emission restarts the job files so reruns are stable
        for path in (jobs_path, ledger_file):
            if path.exists():
                path.unlink()
    rounds = _load_rounds(ctx)
    if only_t is not None:
        rounds = [w for w in rounds if w.t == only_t]
        if not rounds:
            raise ValidationError(f"no assembled round t={only_t}")
    hyper = dict(cfg.options.get("hyperparameters", {}))
    for w in rounds:
        manifest = read_manifest(ctx.path(f"{w.assembled_manifest}.manifest.jsonl"))
        emit_training_job(w, manifest, trainer, hyper, jobs_path=jobs_path)
    made = ["jobs.jsonl"]
    if ledger_file.exists():
        made.append("trainer_ledger.jsonl")
    return made


_DATASET_OF_ORIGIN = {"itw": "in-the-wild", "real_pool": "in-the-wild", "gen": "generators"}


def _stage_eval(ctx: _RunContext) -> list[str]:
    cfg = ctx.config
    detector = DetectorBackend(
        backend_name=cfg.backends["detector"].get("name", "detector"),
        endpoint=cfg.backend_endpoint("detector"),
    )
    records: list[ScoreRecord] = []
    for w in _load_rounds(ctx):
        manifest = read_manifest(ctx.path(f"{w.assembled_manifest}.manifest.jsonl"))
        for e in manifest.entries:
            records.append(
                ScoreRecord(
                    image_id=e.image_id,
                    score=detector.score(e.image_id, e.label),
                    label=e.label,
                    dataset_name=_DATASET_OF_ORIGIN[e.stratum_origin],
                    generator_name=e.generator_name,
                    task_id=w.t,
                )
            )
    registry = _load_registry(ctx)
    if registry:
        rounds = _load_rounds(ctx)
        for row in registry.rows:
            for image_id in row.test_ids:
                for w in rounds:
                    records.append(
                        ScoreRecord(
                            image_id=image_id,
                            score=detector.score(image_id, 1),
                            label=1,
                            dataset_name="generators-test",
                            generator_name=row.name,
                            task_id=w.t,
                        )
                    )
    write_score_records(ctx.path("scores.jsonl"), records)
    report = build_report(records)
    atomic_write_bytes(ctx.path("report.json"), (report_to_json(report) + "\n").encode())
    atomic_write_bytes(ctx.path("report.txt"), render_table(report).encode())
    return ["scores.jsonl", "report.json", "report.txt"]
