"""Score-file evaluation: AUC/ACC, grouped reports, forgetting deltas.

AUC comes from average ranks with midrank tie handling; the brute-force
pair count below confirms it on the spot. The report groups records per
dataset, per generator, and per (task, dataset) cell, and the precision
audit replays the weak-label validation protocol.

Run from the repo root:  python3 demos/03_evaluation_metrics.py
"""

from datetime import date

import numpy as np

from wildharvest import DatasetEntry, ScoreRecord, acc, auc, build_report
from wildharvest.evaluation import forgetting_delta, render_table, validation_precision

rng = np.random.RandomState(99)

# -- 1. AUC with ties, checked against pair counting ---------------------------
labels = rng.randint(0, 2, size=400)
labels[:2] = (0, 1)
scores = np.clip(rng.randint(0, 12, size=400) / 11.0 * 0.6 + 0.35 * labels, 0, 1)
records = [
    ScoreRecord(image_id=f"img-{i:03d}", score=float(s), label=int(l), dataset_name="demo")
    for i, (s, l) in enumerate(zip(scores, labels))
]
pos = scores[labels == 1]
neg = scores[labels == 0]
diff = pos[:, None] - neg[None, :]
brute = (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size
print(f"rank AUC = {auc(records):.12f}")
print(f"pair AUC = {brute:.12f}   (ties count one half)")
print(f"ACC@0.5  = {acc(records):.4f}")

# -- 2. a task x dataset report ------------------------------------------------
grid = []
for task in (1, 2, 3, 4):
    for dataset, lift in (("recent-generators", 0.04 * task), ("itw-data", 0.02 * task)):
        for i in range(60):
            label = i % 2
            score = float(np.clip(rng.uniform() * 0.55 + (0.25 + lift) * label, 0, 1))
            grid.append(
                ScoreRecord(
                    image_id=f"{dataset}-{task}-{i:02d}", score=score, label=label,
                    dataset_name=dataset, task_id=task,
                    generator_name=f"model-{i % 3}" if label else None,
                )
            )
report = build_report(grid)
print("\n" + render_table(report))

print("per-generator accuracy (fake-only groups report ACC alone):")
for name, value in sorted(report.per_generator.items()):
    print(f"  {name}: {value * 100:.2f}%")

print("\nconsecutive-task AUC deltas (percentage points):")
for dataset in ("recent-generators", "itw-data"):
    for a, b in ((1, 2), (2, 3), (3, 4)):
        delta = forgetting_delta(report, a, b, dataset, metric="auc")
        print(f"  task {a} -> {b}  {dataset:.<22} {delta:+.2f}")

# -- 3. weak-label precision audit -----------------------------------------------
entries = [
    DatasetEntry(image_id=f"fk-{i:05d}", label=1, origin="itw",
                 event_date=date(2025, 6, 1), round_introduced=1)
    for i in range(2884)
]
worksheet = validation_precision(entries, sample_fraction=0.104, seed=7)
print(f"\nprecision audit samples {worksheet['sampled_n']} of {len(entries)} fakes")
annotations = {row["image_id"]: "correct" for row in worksheet["worksheet"]}
for image_id in list(annotations)[:23]:
    annotations[image_id] = "incorrect"  # pretend review found 23 mislabels
result = validation_precision(entries, sample_fraction=0.104, seed=7,
                              annotations=annotations)
print(f"annotated precision: {result['correct']}/{result['sampled_n']} "
      f"= {result['precision']:.4f}")
