"""Round timeline, replay sampling, dataset assembly, and job emission.

A round's training set is the union of the window's in-the-wild data,
the window's generator-driven data, and a replay buffer sampled from
everything accumulated in earlier rounds. Assembly never interprets
detector hyperparameters; training is an external backend's job.
"""

from __future__ import annotations

import calendar
import json
import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from fractions import Fraction
from pathlib import Path

import numpy as np

from .backends import TrainerBackend
from .errors import (
    LabelConflictError,
    RegistryError,
    SplitLeakageError,
    UndatedEntryError,
    ValidationError,
)
from .manifest import manifest_hash, serialize_manifest
from .types import (
    DatasetEntry,
    DatasetManifest,
    ReplayBuffer,
    TrainingJob,
    UpdateRound,
    exact_floor_product,
    parse_date,
)

logger = logging.getLogger(__name__)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def add_months(d: date, months: int) -> date:
    month_index = d.month - 1 + months
    year = d.year + month_index // 12
    month = month_index % 12 + 1
    day = min(d.day, calendar.monthrange(year, month)[1])
    return date(year, month, day)


def partition_timeline(
    entries: list[DatasetEntry],
    anchor_date: date,
    interval_months: int = 3,
    num_windows: int | None = None,
) -> list[UpdateRound]:
    """Consecutive, disjoint round windows of ``interval_months`` each.

    Window t covers [anchor + (t-1)*interval, anchor + t*interval - 1 day],
    end boundary inclusive. The window count defaults to whatever covers
    the latest entry; pass ``num_windows`` to force trailing empty rounds.
    """
    if interval_months < 1:
        raise ValidationError("interval_months must be >= 1")
    if num_windows is not None and num_windows < 1:
        raise ValidationError("num_windows must be >= 1")
    undated = [e.image_id for e in entries if getattr(e, "event_date", None) is None]
    if undated:
        raise UndatedEntryError(sorted(undated))
    if num_windows is None:
        dated = [e.event_date for e in entries if e.event_date >= anchor_date]
        if not dated:
            num_windows = 1
        else:
            last = max(dated)
            num_windows = 1
            while add_months(anchor_date, num_windows * interval_months) <= last:
                num_windows += 1
    windows = []
    for t in range(1, num_windows + 1):
        start = add_months(anchor_date, (t - 1) * interval_months)
        end = add_months(anchor_date, t * interval_months) - timedelta(days=1)
        windows.append(UpdateRound(t=t, window_start=start, window_end=end))
    return windows


def assign_to_windows(
    entries: list[DatasetEntry],
    windows: list[UpdateRound],
) -> dict[int, list[DatasetEntry]]:
    """Map round index -> entries whose event_date the window contains.

    Entries dated before the first window land in a pretraining bucket
    at index 0 with a warning; entries after the last window are an
    error (extend the timeline instead).
    """
    undated = [e.image_id for e in entries if getattr(e, "event_date", None) is None]
    if undated:
        raise UndatedEntryError(sorted(undated))
    buckets: dict[int, list[DatasetEntry]] = {w.t: [] for w in windows}
    pre_anchor: list[DatasetEntry] = []
    for e in sorted(entries, key=lambda e: e.image_id):
        if e.event_date < windows[0].window_start:
            pre_anchor.append(e)
            continue
        for w in windows:
            if w.contains(e.event_date):
                buckets[w.t].append(e)
                break
        else:
            raise ValidationError(
                f"entry {e.image_id} dated {e.event_date} falls after the last window"
            )
    if pre_anchor:
        logger.warning("%d entries predate the timeline anchor; bucketed as round 0", len(pre_anchor))
        buckets[0] = pre_anchor
    empty = [t for t, group in buckets.items() if t > 0 and not group]
    for t in empty:
        logger.warning("round %d window holds no entries", t)
    return buckets


def sample_replay(
    pool: list[DatasetEntry],
    rho: float,
    seed: int,
    round_t: int,
    stratified: bool = True,
) -> ReplayBuffer:
    """Seeded sample of floor(rho * |pool|) entries, without replacement.

    Stratified proportionally by label with the remainder going to the
    larger stratum (ties resolve to the real stratum); the unstratified
    uniform sampler stays available behind ``stratified=False``.
    Sampled entries are re-tagged as replays of their source origin.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValidationError(f"rho={rho} outside [0,1]")
    ordered = sorted(pool, key=lambda e: e.image_id)
    if len({e.image_id for e in ordered}) != len(ordered):
        raise ValidationError("replay pool contains duplicate image ids")
    total = exact_floor_product(rho, len(ordered))
    rng = np.random.RandomState(seed)
    if total == 0:
        if rho > 0 and ordered:
            logger.warning("replay proportion %.3f of pool %d floors to zero", rho, len(ordered))
        chosen: list[DatasetEntry] = []
    elif not stratified:
        picks = rng.permutation(len(ordered))[:total]
        chosen = [ordered[i] for i in sorted(picks)]
    else:
        reals = [e for e in ordered if e.label == 0]
        fakes = [e for e in ordered if e.label == 1]
        quota = {
            0: total * len(reals) // len(ordered),
            1: total * len(fakes) // len(ordered),
        }
        leftover = total - quota[0] - quota[1]
        if leftover:
            quota[0 if len(reals) >= len(fakes) else 1] += leftover
        chosen = []
        for label, stratum in ((0, reals), (1, fakes)):
            take = min(quota[label], len(stratum))
            picks = rng.permutation(len(stratum))[:take]
            chosen.extend(stratum[i] for i in sorted(picks))
    return ReplayBuffer(
        round=round_t,
        rho=rho,
        entries=tuple(e.as_replay() for e in sorted(chosen, key=lambda e: e.image_id)),
        source_pool_size=len(ordered),
        seed=seed,
    )


def accumulated_pool(manifests: list[DatasetManifest]) -> list[DatasetEntry]:
    """Union of all entries across earlier rounds, deduplicated by id."""
    seen: dict[str, DatasetEntry] = {}
    for m in sorted(manifests, key=lambda m: (m.round, m.manifest_id)):
        for e in m.entries:
            seen.setdefault(e.image_id, e)
    return [seen[k] for k in sorted(seen)]


def _merge_entries(a: DatasetEntry, b: DatasetEntry) -> DatasetEntry:
    if a.label != b.label:
        raise LabelConflictError(
            f"image {a.image_id} appears with labels {a.label} and {b.label}"
        )
    first, second = (a, b) if a.origin != "replay" else (b, a)
    provenance = tuple(sorted(set(a.provenance) | set(b.provenance)))
    return DatasetEntry(
        image_id=first.image_id,
        label=first.label,
        origin=first.origin,
        event_date=first.event_date,
        round_introduced=min(a.round_introduced, b.round_introduced),
        generator_name=first.generator_name or second.generator_name,
        parent_image_id=first.parent_image_id or second.parent_image_id,
        source_origin=first.source_origin,
        provenance=provenance,
    )


def assemble_round(
    itw: DatasetManifest | None,
    gen: DatasetManifest | None,
    replay: DatasetManifest | None,
    t: int,
    seed: int,
    created_at: date,
    manifest_id: str | None = None,
    reserved_test_ids: set[str] | None = None,
) -> DatasetManifest:
    """Union the round's components into one canonical training manifest.

    Duplicate hashes collapse to one entry with merged provenance; a
    hash carrying both labels is a hard stop, as is any intersection
    with a registered test split. New (non-replay) entries are tagged
    round_introduced = t.
    """
    merged: dict[str, DatasetEntry] = {}
    for component in (itw, gen, replay):
        if component is None:
            continue
        for e in component.entries:
            if e.origin != "replay" and e.round_introduced != t:
                e = DatasetEntry(
                    image_id=e.image_id,
                    label=e.label,
                    origin=e.origin,
                    event_date=e.event_date,
                    round_introduced=t,
                    generator_name=e.generator_name,
                    parent_image_id=e.parent_image_id,
                    source_origin=e.source_origin,
                    provenance=e.provenance,
                )
            merged[e.image_id] = (
                _merge_entries(merged[e.image_id], e) if e.image_id in merged else e
            )
    if reserved_test_ids:
        leaked = sorted(set(merged) & reserved_test_ids)
        if leaked:
            raise SplitLeakageError(
                f"round {t} training manifest contains {len(leaked)} reserved "
                f"test ids: {leaked[:5]}"
            )
    return DatasetManifest(
        manifest_id=manifest_id or f"round-{t:03d}",
        round=t,
        entries=tuple(merged.values()),
        seed=seed,
        created_at=created_at,
    )


def subsample_portion(
    m: DatasetManifest,
    portion: float,
    seed: int,
    manifest_id: str | None = None,
) -> DatasetManifest:
    """Keep a seeded fraction of the manifest, stratified by (label, origin).

    Strata get floor(portion * size) entries each; the remainder up to
    floor(portion * total) goes to the strata with the largest
    fractional parts (ties in stratum-key order). portion=1 is identity.
    """
    if not 0.0 < portion <= 1.0:
        raise ValidationError(f"portion={portion} outside (0,1]")
    strata: dict[tuple[int, str], list[DatasetEntry]] = {}
    for e in m.entries:
        strata.setdefault((e.label, e.origin), []).append(e)
    target_total = exact_floor_product(portion, len(m.entries))
    ratio = Fraction(str(portion))
    exact = {key: ratio * len(group) for key, group in strata.items()}
    take = {key: int(x // 1) for key, x in exact.items()}
    leftover = target_total - sum(take.values())
    by_fraction = sorted(strata, key=lambda key: (-(exact[key] - take[key]), key))
    for key in by_fraction:
        if leftover <= 0:
            break
        if take[key] < len(strata[key]):
            take[key] += 1
            leftover -= 1
    rng = np.random.RandomState(seed)
    kept: list[DatasetEntry] = []
    for key in sorted(strata):
        group = strata[key]
        picks = rng.permutation(len(group))[: take[key]]
        kept.extend(group[i] for i in sorted(picks))
    return DatasetManifest(
        manifest_id=manifest_id or f"{m.manifest_id}-portion{round(portion * 100):03d}",
        round=m.round,
        entries=tuple(kept),
        seed=seed,
        created_at=m.created_at,
    )


def emit_training_job(
    round_record: UpdateRound,
    manifest: DatasetManifest,
    backend: TrainerBackend,
    hyperparameters: dict | None = None,
    jobs_path: str | Path | None = None,
) -> TrainingJob:
    """Hand the assembled manifest to the trainer and persist the job.

    Hyperparameters pass through untouched. Emitting twice for the same
    round is allowed (new job id) but warned about.
    """
    if round_record.assembled_manifest != manifest.manifest_id:
        raise ValidationError(
            f"round {round_record.t} expects manifest {round_record.assembled_manifest}, "
            f"got {manifest.manifest_id}"
        )
    serialize_manifest(manifest)  # validates before emission
    digest = manifest_hash(manifest)
    hyperparameters = hyperparameters or {}
    if jobs_path is not None and Path(jobs_path).exists():
        earlier = [
            json.loads(line)
            for line in Path(jobs_path).read_text().splitlines()
            if line.strip()
        ]
        if any(rec["round"] == round_record.t for rec in earlier):
            logger.warning("round %d already has an emitted job; emitting another", round_record.t)
    job_id = backend.submit(round_record.t, manifest.manifest_id, digest, hyperparameters)
    job = TrainingJob(
        job_id=job_id,
        round=round_record.t,
        manifest_id=manifest.manifest_id,
        manifest_hash=digest,
        detector_backend=backend.endpoint,
        hyperparameters=tuple(sorted((str(k), str(v)) for k, v in hyperparameters.items())),
    )
    if jobs_path is not None:
        Path(jobs_path).parent.mkdir(parents=True, exist_ok=True)
        with Path(jobs_path).open("a") as f:
            f.write(
                json.dumps(
                    {
                        "job_id": job.job_id,
                        "round": job.round,
                        "manifest_id": job.manifest_id,
                        "manifest_hash": job.manifest_hash,
                        "detector_backend": job.detector_backend,
                        "hyperparameters": dict(job.hyperparameters),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return job


# -- generator registry ----------------------------------------------------

@dataclass(frozen=True)
class GeneratorRow:
    """One generator release with its train/test split bookkeeping."""

    name: str
    release_date: date
    size: int
    train_count: int
    test_count: int
    image_ids: tuple[str, ...] = ()
    test_ids: tuple[str, ...] = ()

    @property
    def train_ids(self) -> tuple[str, ...]:
        reserved = set(self.test_ids)
        return tuple(i for i in self.image_ids if i not in reserved)


@dataclass(frozen=True)
class GeneratorRegistry:
    rows: tuple[GeneratorRow, ...]
    seed: int

    def reserved_test_ids(self) -> set[str]:
        out: set[str] = set()
        for row in self.rows:
            out.update(row.test_ids)
        return out

    def row(self, name: str) -> GeneratorRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise RegistryError(f"no generator named {name!r}")


DEFAULT_TEST_FRACTION = 0.1


def register_generators(registry_file: str | Path, seed: int = 0) -> GeneratorRegistry:
    """Load a generator registry file; see registry_from_dict."""
    try:
        payload = json.loads(Path(registry_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RegistryError(f"cannot read registry {registry_file}: {exc}") from exc
    return registry_from_dict(payload, seed=seed)


def registry_from_dict(payload: dict, seed: int = 0) -> GeneratorRegistry:
    """Build a registry, filling in default splits where absent.

    Rows with explicit train/test counts keep them verbatim (they must
    sum to the size); rows without get test = max(1, round(0.1 * size)).
    When a row lists its image ids, test membership is assigned by a
    seeded shuffle keyed on (seed, generator name).
    """
    rows = []
    for raw in payload.get("generators", []):
        try:
            name = raw["name"]
            release = parse_date(raw["release_date"])
            size = int(raw["size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise RegistryError(f"bad registry row {raw!r}: {exc}") from exc
        if size < 1:
            raise RegistryError(f"generator {name}: size must be positive")
        if "train" in raw or "test" in raw:
            train, test = int(raw.get("train", 0)), int(raw.get("test", 0))
            if train + test != size:
                raise RegistryError(
                    f"generator {name}: split {train}/{test} does not sum to size {size}"
                )
        else:
            # exact round-half-up of size/10
            test = max(1, (size + 5) // 10)
            train = size - test
        image_ids = tuple(raw.get("image_ids") or ())
        if image_ids and len(image_ids) != size:
            raise RegistryError(
                f"generator {name}: {len(image_ids)} image ids for size {size}"
            )
        test_ids: tuple[str, ...] = ()
        if image_ids:
            row_seed = np.random.RandomState(
                [seed, int.from_bytes(name.encode(), "big") % (2**31)]
            )
            order = row_seed.permutation(len(image_ids))
            picked = sorted(order[:test])
            test_ids = tuple(sorted(image_ids[i] for i in picked))
        rows.append(
            GeneratorRow(
                name=name,
                release_date=release,
                size=size,
                train_count=train,
                test_count=test,
                image_ids=image_ids,
                test_ids=test_ids,
            )
        )
    return GeneratorRegistry(rows=tuple(rows), seed=seed)


def gen_entries_for_window(
    registry: GeneratorRegistry,
    window: UpdateRound,
) -> list[DatasetEntry]:
    """Training-split entries for generators released inside a window."""
    entries = []
    for row in registry.rows:
        if not window.contains(row.release_date):
            continue
        for image_id in row.train_ids:
            entries.append(
                DatasetEntry(
                    image_id=image_id,
                    label=1,
                    origin="gen",
                    event_date=row.release_date,
                    round_introduced=window.t,
                    generator_name=row.name,
                    provenance=(f"generator:{row.name}",),
                )
            )
    return sorted(entries, key=lambda e: e.image_id)
