"""The whole pipeline in one call, twice, to show memoized reruns.

The first run executes every stage against the fixture corpus with mock
backends; the second is pure cache hits because every stage's outputs
are recorded in the run ledger under the config fingerprint. The same
thing is available from the shell as
``wildharvest run --config configs/fixture.json --stages all``.

Run from the repo root:  python3 demos/04_full_pipeline.py
"""

import shutil
from pathlib import Path

from wildharvest import RunConfig, run_pipeline
from wildharvest.manifest import manifest_hash, read_manifest
from wildharvest.pipeline import STAGE_ORDER

REPO = Path(__file__).resolve().parents[1]
WORK = REPO / "work"

for stale in (WORK / "store", WORK / "manifests"):
    if stale.exists():
        shutil.rmtree(stale)

config = RunConfig.from_file(REPO / "configs" / "fixture.json")
print(f"config fingerprint: {config.fingerprint[:16]}…\n")

print("first run:")
for rec in run_pipeline(config, list(STAGE_ORDER)):
    outputs = ", ".join(sorted(rec["outputs"])[:3])
    more = "" if len(rec["outputs"]) <= 3 else f" (+{len(rec['outputs']) - 3} more)"
    print(f"  {rec['stage']:<9} ran     -> {outputs}{more}")

print("\nsecond run (memoized):")
for rec in run_pipeline(config, list(STAGE_ORDER)):
    assert rec["cache_hit"]
    print(f"  {rec['stage']:<9} cached  ({len(rec['outputs'])} outputs intact)")

manifests = config.manifests_dir
rounds = [read_manifest(p) for p in sorted(manifests.glob("round-0*.manifest.jsonl"))]
print("\nassembled rounds:")
for m in rounds:
    origins = {}
    for e in m.entries:
        origins[e.origin] = origins.get(e.origin, 0) + 1
    parts = ", ".join(f"{k}={v}" for k, v in sorted(origins.items()))
    print(f"  round {m.round}: {len(m.entries):3d} entries  ({parts})")
print(f"\nfinal manifest hash: {manifest_hash(rounds[-1])}")

print("\nevaluation report:")
print((manifests / "report.txt").read_text())
