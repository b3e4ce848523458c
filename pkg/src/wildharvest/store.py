"""Content-addressed store: raw bytes keyed by their hash.

Layout: ``store/<first-2-hex>/<hash>`` holding the raw bytes, with a
sibling ``<hash>.meta`` JSON record (format, dimensions, source URLs,
article ids). Writers go through a temp file plus atomic rename, so
concurrent writers of identical content converge on identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

from .errors import EmptyContent

def hash_content(data: bytes) -> str:
    """Deterministic hex digest of raw bytes (sha256)."""
    if not data:
        raise EmptyContent("cannot hash empty content")
    return hashlib.sha256(data).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


class ContentStore:
    """On-disk content-addressed blob store with mergeable meta records."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _blob_path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def _meta_path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.meta"

    def _atomic_write(self, path: Path, data: bytes):
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

    def put(self, data: bytes, meta: dict | None = None) -> str:
        """Store bytes, merge meta with any existing record, return the hash."""
        digest = hash_content(data)
        blob = self._blob_path(digest)
        if not blob.exists():
            self._atomic_write(blob, data)
        if meta is not None:
            merged = self._merge_meta(self.read_meta(digest) or {}, meta)
            self._atomic_write(self._meta_path(digest), _canonical_json(merged).encode())
        return digest

    @staticmethod
    def _merge_meta(old: dict, new: dict) -> dict:
        merged = dict(old)
        for key, value in new.items():
            if isinstance(value, (list, tuple)):
                have = merged.get(key) or []
                merged[key] = sorted(set(have) | set(value))
            elif value is not None or key not in merged:
                merged[key] = value
        return merged

    def get(self, digest: str) -> bytes:
        return self._blob_path(digest).read_bytes()

    def exists(self, digest: str) -> bool:
        return self._blob_path(digest).exists()

    def read_meta(self, digest: str) -> dict | None:
        path = self._meta_path(digest)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def __contains__(self, digest: str) -> bool:
        return self.exists(digest)

    def __len__(self) -> int:
        return sum(
            1
            for shard in self.root.iterdir()
            if shard.is_dir()
            for p in shard.iterdir()
            if not p.name.endswith(".meta") and not p.name.startswith(".")
        )
