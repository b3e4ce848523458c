"""Real-fake pairing and continual round assembly with a replay buffer.

Fakes retrieve their most similar reals from a pool index (greedy,
globally without replacement), dated entries fall into quarterly round
windows, and each round's training set is the union of its in-the-wild
data, its generator-driven data, and a replayed sample of everything
accumulated before it.

Run from the repo root:  python3 demos/02_pairing_and_rounds.py
"""

from datetime import date
from pathlib import Path

import numpy as np

from wildharvest import (
    DatasetEntry,
    DatasetManifest,
    RealPoolIndex,
    assemble_round,
    assign_pairs,
    partition_timeline,
    register_generators,
    sample_replay,
    subsample_portion,
    topk_matches,
)
from wildharvest.scheduler import assign_to_windows

REPO = Path(__file__).resolve().parents[1]
rng = np.random.RandomState(2026)

# -- 1. TopK retrieval against a small pool ----------------------------------
pool = [(f"real-{i:03d}", rng.randn(5)) for i in range(40)]
idx = RealPoolIndex(pool)
fake_vec = rng.randn(5)
print("top-5 reals for one fake (cosine similarity, ties by id):")
for real_id, sim in topk_matches(fake_vec, idx, k=5):
    print(f"  {real_id}  {sim:+.4f}")

# -- 2. greedy pairing without replacement -------------------------------------
fakes = [(f"fake-{i:02d}", rng.randn(5)) for i in range(6)]
pairs = assign_pairs(fakes, idx, k=40, reals_per_fake=2)
print("\npairings (each real used at most once across all fakes):")
for p in pairs:
    partners = ", ".join(f"{r} ({s:+.3f})" for r, s in zip(p.real_ids, p.similarities))
    print(f"  {p.fake_id} -> {partners}")
used = [r for p in pairs for r in p.real_ids]
assert len(used) == len(set(used))

# -- 3. quarterly round windows -------------------------------------------------
def entry(image_id, label, origin, when, **kw):
    if origin == "gen":
        kw.setdefault("generator_name", "demo-gen")
    return DatasetEntry(image_id=image_id, label=label, origin=origin,
                        event_date=when, round_introduced=0, **kw)

dated = [
    entry(f"img-{i:03d}", i % 2, "itw" if i % 2 else "real_pool",
          date(2025, 1 + i % 12, 1 + i % 27))
    for i in range(120)
]
windows = partition_timeline(dated, anchor_date=date(2025, 1, 1), interval_months=3)
buckets = assign_to_windows(dated, windows)
print("\nquarterly windows and their entry counts:")
for w in windows:
    print(f"  task {w.t}: {w.window_start} .. {w.window_end}  "
          f"{len(buckets[w.t])} entries")

# -- 4. rounds: union of itw + gen + replay --------------------------------------
registry = register_generators(REPO / "fixtures" / "recent_generators_registry.json")
print(f"\ngenerator registry: {len(registry.rows)} releases, "
      f"{sum(r.test_count for r in registry.rows)} images reserved for evaluation")

assembled: list[DatasetManifest] = []
for w in windows:
    itw = DatasetManifest(manifest_id=f"demo-itw-{w.t}", round=w.t,
                          entries=tuple(buckets[w.t]), seed=7,
                          created_at=date(2026, 1, 15))
    pool_entries = []
    seen = set()
    for m in assembled:
        for e in m.entries:
            if e.image_id not in seen:
                seen.add(e.image_id)
                pool_entries.append(e)
    buffer = sample_replay(pool_entries, rho=0.05, seed=7 + w.t, round_t=w.t)
    replay = DatasetManifest(manifest_id=f"demo-replay-{w.t}", round=w.t,
                             entries=buffer.entries, seed=7 + w.t,
                             created_at=date(2026, 1, 15))
    out = assemble_round(itw, None, replay, t=w.t, seed=7,
                         created_at=date(2026, 1, 15),
                         manifest_id=f"demo-round-{w.t}")
    assembled.append(out)
    print(f"  round {w.t}: {len(itw.entries):3d} new + {len(buffer.entries):2d} replay "
          f"(pool was {len(pool_entries):3d}) -> {len(out.entries):3d} entries")

# -- 5. ablation axis: train on a portion of the data ------------------------------
full = assembled[-1]
for portion in (0.1, 0.3, 0.5, 1.0):
    sub = subsample_portion(full, portion, seed=7)
    print(f"  portion {portion:>4.0%}: {len(sub.entries):3d} of {len(full.entries)} entries")
