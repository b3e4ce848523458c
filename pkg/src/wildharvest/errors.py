"""Exception hierarchy shared by every pipeline stage.

Three base classes partition the errors by CLI exit code: validation
problems (exit 2), unreachable or refusing backends (exit 3), and data
integrity violations (exit 4).
"""

from __future__ import annotations


class WildharvestError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(WildharvestError):
    """Bad inputs, bad config, or contract violations caught up front."""

    exit_code = 2


class BackendError(WildharvestError):
    """A network source or model backend is unreachable or refusing work."""

    exit_code = 3


class DataIntegrityError(WildharvestError):
    """Stored or derived data contradicts a hard invariant."""

    exit_code = 4


# -- domain-model --------------------------------------------------------

class EmptyContent(ValidationError):
    """Content hashing was handed an empty byte sequence."""


class ParseError(ValidationError):
    """Malformed manifest or record file."""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", offset {offset}" if offset is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.offset = offset


# -- ingestion -----------------------------------------------------------

class SourceUnavailable(BackendError):
    """All retries against a source adapter failed."""


class AdapterPayloadError(ValidationError):
    """A source record could not be interpreted; the record is skipped."""


class EmptyCandidateSet(ValidationError):
    """No candidate image could be retrieved for an article."""


# -- extraction ----------------------------------------------------------

class ExtractionSchemaError(ValidationError):
    """Backend response does not match the required structured schema."""


class BackendUnavailable(BackendError):
    """A model backend could not be reached."""


# -- retrieval-core ------------------------------------------------------

class EmbeddingInputError(ValidationError):
    """Image bytes could not be decoded for embedding."""


class ZeroVectorError(ValidationError):
    """Cosine similarity is undefined for a zero vector."""


class DimensionError(ValidationError):
    """Vector dimensions do not match."""


# -- pairing -------------------------------------------------------------

class EmptyPoolError(ValidationError):
    """TopK retrieval requested against an empty real pool."""


class PairExhaustionError(DataIntegrityError):
    """A fake's entire TopK list is already consumed; raise K or the pool."""

    def __init__(self, fake_id: str, k: int):
        super().__init__(f"all top-{k} reals for fake {fake_id} already consumed")
        self.fake_id = fake_id


# -- continual-scheduler -------------------------------------------------

class UndatedEntryError(ValidationError):
    """Timeline partitioning requires every entry to carry a date."""

    def __init__(self, image_ids: list[str]):
        super().__init__(f"{len(image_ids)} entries lack an event date: {image_ids[:5]}")
        self.image_ids = image_ids


class LabelConflictError(DataIntegrityError):
    """The same content hash appears with both labels in one round."""


class SplitLeakageError(DataIntegrityError):
    """An assembled training manifest intersects a registered test split."""


class JobRejected(BackendError):
    """The trainer backend rejected a training job."""


class RegistryError(ValidationError):
    """Generator registry row is inconsistent."""


# -- evaluation ----------------------------------------------------------

class SingleClassError(ValidationError):
    """AUC needs at least one positive and one negative record."""


class MissingCellError(ValidationError):
    """A requested (task, dataset) report cell does not exist."""


class IncompleteAnnotationError(ValidationError):
    """Sampled ids lack annotations."""

    def __init__(self, image_ids: list[str]):
        super().__init__(f"{len(image_ids)} sampled entries lack annotations: {image_ids[:5]}")
        self.image_ids = image_ids


# -- cli / pipeline ------------------------------------------------------

class MissingInputError(ValidationError):
    """A requested stage is missing its upstream outputs."""


class StaleCacheError(ValidationError):
    """Cached stage outputs were produced under a different config hash."""


class ConcurrentRunError(ValidationError):
    """Another pipeline run holds the store lock."""
