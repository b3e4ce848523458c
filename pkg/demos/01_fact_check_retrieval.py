"""Walk one article through the fact-check retrieval chain.

Everything runs offline against the shipped fixture corpus and the
deterministic mock backends: extraction decides relevance and produces
captions, candidates get VLM-scored against every caption, confident
matches become anchors, visually similar candidates join by expansion,
and the kept images are cut into region segments.

Run from the repo root:  python3 demos/01_fact_check_retrieval.py
"""

from datetime import date
from pathlib import Path

from wildharvest import (
    ContentStore,
    SourceAdapter,
    ThresholdConfig,
    collect_candidate_images,
    expand_similar,
    extract_article,
    fetch_articles,
    finalize_set,
    get_template,
    score_candidates,
    segment_images,
    select_anchors,
)
from wildharvest.backends import (
    EmbeddingBackend,
    ImageTextScorerBackend,
    SegmenterBackend,
    TextModelBackend,
)

REPO = Path(__file__).resolve().parents[1]
CORPUS = REPO / "fixtures" / "corpus-v1"
WORK = REPO / "work" / "demo-retrieval"

adapter = SourceAdapter(adapter_name="fixture-articles", kind="fixture",
                        endpoint=str(CORPUS))
store = ContentStore(WORK / "store")
cfg = ThresholdConfig()  # tau_anchor=0.8, tau_sim=0.75, seg_threshold=0.4

# -- 1. fetch the 2025 article corpus ---------------------------------------
articles = fetch_articles(adapter, "ai generated image",
                          (date(2025, 1, 1), date(2025, 12, 31)))
print(f"fetched {len(articles)} articles "
      f"({articles[0].published_at} .. {articles[-1].published_at})")

# -- 2. LLM extraction: is the article about AI imagery? --------------------
extractor = TextModelBackend(
    backend_name="mock-extractor",
    endpoint="mock:" + str(CORPUS / "extraction" / "responses.json"),
)
p1 = get_template("p1@v1")
article = next(a for a in articles if a.article_id == "art-003")
descriptions, article = extract_article(article, p1, extractor)
print(f"\n{article.article_id}: relevant={descriptions.relevant}")
for i, caption in enumerate(descriptions.captions, 1):
    print(f"  caption {i}: {caption}")

# -- 3. harvest the candidate images -----------------------------------------
result = collect_candidate_images(article, adapter, store,
                                  fetch_date=date(2026, 1, 15))
print(f"\ncollected {len(result.candidates)} candidate images "
      f"({len(result.skipped)} skipped)")

# -- 4. VLM scoring and anchor selection --------------------------------------
scorer = ImageTextScorerBackend(backend_name="mock-scorer", endpoint="mock:")
p2 = get_template("p2@v1")
scored = score_candidates(list(result.candidates), descriptions, p2, scorer)
anchors = select_anchors(scored, cfg)
print(f"\nper-candidate best caption alignment (anchor threshold {cfg.tau_anchor}):")
for s in scored:
    marker = "ANCHOR" if any(a.image_id == s.image_id for a in anchors) else ""
    print(f"  {s.image_id[:12]}  score={s.anchor_score:.2f}  {marker}")

# -- 5. similarity expansion and the final set ---------------------------------
embedder = EmbeddingBackend(backend_name="mock-embedder", endpoint="mock:", dim=5)
expanded = expand_similar(anchors, scored, embedder, cfg)
final_ids = finalize_set(anchors, expanded)
print(f"\nexpansion added {len(expanded)} candidates at tau_sim={cfg.tau_sim}; "
      f"final set holds {len(final_ids)} images")

# -- 6. segmentation: isolate the meaningful regions ----------------------------
segmenter = SegmenterBackend(backend_name="mock-segmenter", endpoint="mock:")
segments = segment_images(final_ids, segmenter, cfg, store)
print(f"segmentation kept {len(segments)} regions at confidence >= {cfg.seg_threshold}:")
for seg in segments:
    x, y, w, h = seg.bounding_box
    print(f"  {seg.segment_id[:12]}  parent={seg.parent_image_id[:12]} "
          f"box=({x},{y},{w}x{h})  conf={seg.confidence:.2f}")

print(f"\nstore now holds {len(store)} content-addressed blobs under {store.root}")
