"""Canonical, byte-stable serialization for manifests and record files.

Manifests are line-oriented: one JSON header record, then one JSON entry
per line sorted by image_id, with sorted keys and fixed number
formatting. Identical logical content always produces identical bytes,
so manifest hashes double as cache keys. Exact field names are frozen
by golden-file tests.
"""

from __future__ import annotations

import json
import os
import tempfile
from datetime import date
from pathlib import Path

from .errors import ParseError, ValidationError
from .store import hash_content
from .types import DatasetEntry, DatasetManifest

MANIFEST_SUFFIX = ".manifest.jsonl"
_HEADER_KIND = "manifest-header"


def format_score(x: float) -> float:
    """Scores and similarities carry 6 decimal digits in serialized form."""
    return round(float(x), 6)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj) -> str:
    """Stable hash of any JSON-serializable configuration object."""
    return hash_content(canonical_json(obj).encode())


def entry_to_record(e: DatasetEntry) -> dict:
    return {
        "event_date": e.event_date.isoformat(),
        "generator_name": e.generator_name,
        "image_id": e.image_id,
        "label": e.label,
        "origin": e.origin,
        "parent_image_id": e.parent_image_id,
        "provenance": list(e.provenance),
        "round_introduced": e.round_introduced,
        "source_origin": e.source_origin,
    }


def entry_from_record(rec: dict) -> DatasetEntry:
    return DatasetEntry(
        image_id=rec["image_id"],
        label=int(rec["label"]),
        origin=rec["origin"],
        event_date=date.fromisoformat(rec["event_date"]),
        round_introduced=int(rec["round_introduced"]),
        generator_name=rec.get("generator_name"),
        parent_image_id=rec.get("parent_image_id"),
        source_origin=rec.get("source_origin"),
        provenance=tuple(rec.get("provenance") or ()),
    )


def serialize_manifest(m: DatasetManifest, stamp: str | None = None) -> bytes:
    """Canonical bytes for a manifest; rejects duplicate image ids.

    ``stamp`` is the run config hash recorded in the header; it is not
    part of the manifest value and round-trips are independent of it.
    """
    dupes = m.duplicate_ids()
    if dupes:
        raise ValidationError(f"manifest {m.manifest_id}: duplicate image ids {dupes[:5]}")
    header = {
        "kind": _HEADER_KIND,
        "manifest_id": m.manifest_id,
        "round": m.round,
        "seed": m.seed,
        "created_at": m.created_at.isoformat(),
        "entry_count": len(m.entries),
        "config_hash": stamp,
    }
    lines = [canonical_json(header)]
    lines.extend(canonical_json(entry_to_record(e)) for e in m.entries)
    return ("\n".join(lines) + "\n").encode()


def deserialize_manifest(data: bytes) -> DatasetManifest:
    lines = data.decode().splitlines()
    if not lines:
        raise ParseError("empty manifest", line=1)
    records = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON record: {exc.msg}", line=i, offset=exc.pos) from exc
    header = records[0]
    if header.get("kind") != _HEADER_KIND:
        raise ParseError("first record must be the manifest header", line=1)
    try:
        entries = tuple(entry_from_record(rec) for rec in records[1:])
        m = DatasetManifest(
            manifest_id=header["manifest_id"],
            round=int(header["round"]),
            entries=entries,
            seed=int(header["seed"]),
            created_at=date.fromisoformat(header["created_at"]),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"manifest field error: {exc}") from exc
    if header.get("entry_count") != len(m.entries):
        raise ParseError(
            f"header declares {header.get('entry_count')} entries, found {len(m.entries)}",
            line=1,
        )
    return m


def manifest_stamp(data: bytes) -> str | None:
    """Config hash recorded in a serialized manifest's header."""
    first = data.decode().splitlines()[0]
    return json.loads(first).get("config_hash")


def manifest_hash(m: DatasetManifest) -> str:
    """Content hash of the canonical serialization (stamp excluded)."""
    return hash_content(serialize_manifest(m))


def atomic_write_bytes(path: str | Path, data: bytes):
    """Write-to-temp then rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path: str | Path, m: DatasetManifest, stamp: str | None = None) -> str:
    atomic_write_bytes(path, serialize_manifest(m, stamp=stamp))
    return hash_content(serialize_manifest(m))


def read_manifest(path: str | Path) -> DatasetManifest:
    return deserialize_manifest(Path(path).read_bytes())


# -- generic line-record files (pair files, score files, pool manifests) --

def write_records(path: str | Path, records: list[dict], header: dict | None = None):
    """Write a deterministic JSONL record file, optionally with a header."""
    lines = []
    if header is not None:
        lines.append(canonical_json(header))
    lines.extend(canonical_json(rec) for rec in records)
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode() if lines else b"")


def read_records(path: str | Path) -> list[dict]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON record in {Path(path).name}: {exc.msg}", line=i, offset=exc.pos) from exc
    return out
