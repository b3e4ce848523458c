"""wildharvest: weakly supervised in-the-wild AI-image dataset pipeline.

Builds labeled datasets from fact-check articles (extraction, anchor
scoring, similarity expansion, segmentation, real-fake pairing),
schedules continual training rounds with a replay buffer, and evaluates
detector score outputs over time. All model backends are pluggable and
ship with deterministic offline mocks.
"""

from .backends import (
    DetectorBackend,
    EmbeddingBackend,
    ImageTextScorerBackend,
    SegmenterBackend,
    TextModelBackend,
    TrainerBackend,
)
from .evaluation import (
    EvaluationReport,
    acc,
    auc,
    build_report,
    forgetting_delta,
    validation_precision,
)
from .extraction import PromptTemplate, extract_article, extract_descriptions, get_template
from .ingestion import (
    SourceAdapter,
    collect_candidate_images,
    fetch_articles,
    fetch_real_pool,
)
from .manifest import (
    deserialize_manifest,
    manifest_hash,
    read_manifest,
    serialize_manifest,
    write_manifest,
)
from .pairing import RealPoolIndex, assign_pairs, topk_matches
from .pipeline import RunConfig, run_pipeline
from .retrieval import (
    EmbeddingCache,
    cosine_similarity,
    embed_image,
    expand_similar,
    finalize_set,
    score_candidates,
    segment_images,
    select_anchors,
)
from .scheduler import (
    GeneratorRegistry,
    GeneratorRow,
    assemble_round,
    emit_training_job,
    partition_timeline,
    register_generators,
    sample_replay,
    subsample_portion,
)
from .store import ContentStore, hash_content
from .types import (
    Article,
    CandidateImage,
    DatasetEntry,
    DatasetManifest,
    DescriptionSet,
    Pair,
    RealImage,
    ReplayBuffer,
    ScoreRecord,
    ScoredCandidate,
    Segment,
    ThresholdConfig,
    TrainingJob,
    UpdateRound,
)

__version__ = "0.1.0"
