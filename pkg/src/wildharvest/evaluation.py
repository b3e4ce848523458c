"""AUC/ACC metrics, grouped reports, forgetting deltas, precision audit.

AUC is the probability a random generated image outscores a random real
one, ties counting one half. It is computed exactly from average ranks
with midrank tie correction, which matches brute-force pair counting;
the test suite holds the two routes together. ACC thresholds scores at
0.5 with the >= convention used pipeline-wide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    IncompleteAnnotationError,
    MissingCellError,
    SingleClassError,
    ValidationError,
)
from .manifest import canonical_json, format_score, read_records, write_records
from .types import DatasetEntry, ScoreRecord

logger = logging.getLogger(__name__)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their rank range."""
    uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    before = np.concatenate(([0], np.cumsum(counts)[:-1]))
    mid = before + (counts + 1) / 2.0
    return mid[inverse]


def auc(records: list[ScoreRecord]) -> float:
    """Rank-based AUC with midrank tie handling, exact to pair counting."""
    labels = np.array([r.label for r in records], dtype=np.int64)
    scores = np.array([r.score for r in records], dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"AUC needs both classes; got {n_pos} positives, {n_neg} negatives"
        )
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def acc(records: list[ScoreRecord], threshold: float = 0.5) -> float:
    """Fraction of records where (score >= threshold) agrees with the label."""
    if not records:
        raise ValidationError("accuracy of an empty record set is undefined")
    hits = sum(1 for r in records if (r.score >= threshold) == (r.label == 1))
    return hits / len(records)


@dataclass(frozen=True)
class GroupMetrics:
    auc: float | None  # None when the group holds a single class
    acc: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class EvaluationReport:
    per_dataset: dict[str, GroupMetrics]
    per_generator: dict[str, float]  # generator -> acc (fake-only groups)
    per_task: dict[tuple[int, str], GroupMetrics]
    deltas: dict[tuple[int, int, str], dict] = field(default_factory=dict)

    @property
    def avg_auc(self) -> float | None:
        defined = [m.auc for m in self.per_dataset.values() if m.auc is not None]
        return sum(defined) / len(defined) if defined else None

    @property
    def avg_acc(self) -> float | None:
        if not self.per_dataset:
            return None
        return sum(m.acc for m in self.per_dataset.values()) / len(self.per_dataset)


def _group_metrics(records: list[ScoreRecord], threshold: float) -> GroupMetrics:
    n_pos = sum(r.label for r in records)
    n_neg = len(records) - n_pos
    group_auc = auc(records) if n_pos and n_neg else None
    return GroupMetrics(auc=group_auc, acc=acc(records, threshold), n_pos=n_pos, n_neg=n_neg)


def build_report(
    records: list[ScoreRecord],
    groupings: tuple[str, ...] = ("dataset", "generator", "task"),
    threshold: float = 0.5,
) -> EvaluationReport:
    """Metrics per dataset, per generator, and per (task, dataset) cell.

    Groups holding a single class report accuracy only with AUC marked
    undefined. Dataset averages are unweighted means over datasets.
    Consecutive-task deltas are precomputed per dataset.
    """
    unknown = set(groupings) - {"dataset", "generator", "task"}
    if unknown:
        raise ValidationError(f"unknown groupings {sorted(unknown)}")
    per_dataset: dict[str, GroupMetrics] = {}
    per_generator: dict[str, float] = {}
    per_task: dict[tuple[int, str], GroupMetrics] = {}

    if "dataset" in groupings:
        names = sorted({r.dataset_name for r in records})
        for name in names:
            group = [r for r in records if r.dataset_name == name]
            per_dataset[name] = _group_metrics(group, threshold)
    if "generator" in groupings:
        names = sorted({r.generator_name for r in records if r.generator_name})
        if not names:
            logger.warning("generator grouping requested but no record names a generator")
        for name in names:
            group = [r for r in records if r.generator_name == name]
            per_generator[name] = acc(group, threshold)
    if "task" in groupings:
        cells = sorted(
            {(r.task_id, r.dataset_name) for r in records if r.task_id is not None}
        )
        if not cells:
            logger.warning("task grouping requested but no record carries a task id")
        for task_id, name in cells:
            group = [
                r for r in records if r.task_id == task_id and r.dataset_name == name
            ]
            per_task[(task_id, name)] = _group_metrics(group, threshold)

    report = EvaluationReport(
        per_dataset=per_dataset, per_generator=per_generator, per_task=per_task
    )
    tasks = sorted({t for t, _ in per_task})
    datasets = sorted({d for _, d in per_task})
    for a, b in zip(tasks, tasks[1:]):
        for name in datasets:
            if (a, name) in per_task and (b, name) in per_task:
                entry = {}
                for metric in ("auc", "acc"):
                    try:
                        entry[metric] = forgetting_delta(report, a, b, name, metric)
                    except MissingCellError:
                        entry[metric] = None
                report.deltas[(a, b, name)] = entry
    return report


def forgetting_delta(
    report: EvaluationReport,
    task_a: int,
    task_b: int,
    dataset: str,
    metric: str = "auc",
) -> float:
    """metric(task_b) - metric(task_a) on one dataset, in percentage points."""
    cells = []
    for t in (task_a, task_b):
        cell = report.per_task.get((t, dataset))
        if cell is None:
            raise MissingCellError(f"no cell for task {t} on dataset {dataset!r}")
        value = getattr(cell, metric, None)
        if value is None:
            raise MissingCellError(f"{metric} undefined for task {t} on {dataset!r}")
        cells.append(value)
    return (cells[1] - cells[0]) * 100.0


def validation_precision(
    entries: list[DatasetEntry],
    sample_fraction: float = 0.104,
    seed: int = 0,
    annotations: dict[str, str] | None = None,
) -> dict:
    """Audit the weak labels: sample fakes, compare against annotations.

    The sample holds round(sample_fraction * |entries|) ids, seeded and
    deterministic. Without annotations an annotation worksheet is
    returned instead of a precision figure; with annotations, every
    sampled id must be covered and precision is correct / sampled_n.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValidationError(f"sample_fraction={sample_fraction} outside (0,1]")
    fakes = sorted({e.image_id for e in entries if e.label == 1})
    if len(fakes) != len(entries):
        raise ValidationError("validation precision runs on fake-labeled entries only")
    sampled_n = int((Fraction(str(sample_fraction)) * len(fakes) + Fraction(1, 2)) // 1)
    sampled_n = min(sampled_n, len(fakes))
    rng = np.random.RandomState(seed)
    picks = rng.permutation(len(fakes))[:sampled_n]
    sampled = sorted(fakes[i] for i in picks)
    if annotations is None:
        return {
            "sampled_n": sampled_n,
            "worksheet": [{"image_id": i, "verdict": ""} for i in sampled],
        }
    missing = [i for i in sampled if annotations.get(i) not in ("correct", "incorrect")]
    if missing:
        raise IncompleteAnnotationError(missing)
    correct = sum(1 for i in sampled if annotations[i] == "correct")
    return {
        "sampled_n": sampled_n,
        "correct": correct,
        "precision": correct / sampled_n if sampled_n else 0.0,
    }


# -- score files and report serialization ---------------------------------

SCORE_FIELDS = ("image_id", "score", "label", "dataset", "generator", "task")


def write_score_records(path: str | Path, records: list[ScoreRecord]):
    rows = [
        {
            "image_id": r.image_id,
            "score": format_score(r.score),
            "label": r.label,
            "dataset": r.dataset_name,
            "generator": r.generator_name,
            "task": r.task_id,
        }
        for r in sorted(records, key=lambda r: (r.dataset_name, r.image_id))
    ]
    write_records(path, rows)


def read_score_records(path: str | Path) -> list[ScoreRecord]:
    out = []
    for rec in read_records(path):
        out.append(
            ScoreRecord(
                image_id=rec["image_id"],
                score=float(rec["score"]),
                label=int(rec["label"]),
                dataset_name=rec["dataset"],
                generator_name=rec.get("generator"),
                task_id=rec.get("task"),
            )
        )
    return out


def _pct(x: float | None) -> float | None:
    return None if x is None else round(x * 100.0, 2)


def report_to_json(report: EvaluationReport) -> str:
    """Machine-readable report; metric values as percentages, 2 decimals."""
    payload = {
        "per_dataset": {
            name: {
                "auc_pct": _pct(m.auc),
                "acc_pct": _pct(m.acc),
                "n_pos": m.n_pos,
                "n_neg": m.n_neg,
            }
            for name, m in sorted(report.per_dataset.items())
        },
        "per_generator": {
            name: {"acc_pct": _pct(v)} for name, v in sorted(report.per_generator.items())
        },
        "per_task": {
            f"task{t}|{name}": {"auc_pct": _pct(m.auc), "acc_pct": _pct(m.acc)}
            for (t, name), m in sorted(report.per_task.items())
        },
        "deltas_pts": {
            f"task{a}->task{b}|{name}": {
                k: (None if v is None else round(v, 2)) for k, v in entry.items()
            }
            for (a, b, name), entry in sorted(report.deltas.items())
        },
        "avg": {"auc_pct": _pct(report.avg_auc), "acc_pct": _pct(report.avg_acc)},
    }
    return canonical_json(payload)


def render_table(report: EvaluationReport) -> str:
    """Plain-text dataset table; each cell reports AUC / ACC (%)."""
    names = sorted(report.per_dataset)
    header = ["dataset".ljust(24), "AUC / ACC (%)"]
    lines = ["  ".join(header), "-" * 44]
    for name in names:
        m = report.per_dataset[name]
        auc_txt = "--" if m.auc is None else f"{m.auc * 100.0:.2f}"
        lines.append(f"{name.ljust(24)}  {auc_txt} / {m.acc * 100.0:.2f}")
    avg_auc = "--" if report.avg_auc is None else f"{report.avg_auc * 100.0:.2f}"
    avg_acc = "--" if report.avg_acc is None else f"{report.avg_acc * 100.0:.2f}"
    lines.append("-" * 44)
    lines.append(f"{'AVG'.ljust(24)}  {avg_auc} / {avg_acc}")
    if report.per_task:
        lines.append("")
        lines.append("task matrix (AUC / ACC %):")
        for (t, name), m in sorted(report.per_task.items()):
            auc_txt = "--" if m.auc is None else f"{m.auc * 100.0:.2f}"
            lines.append(f"  task {t}  {name.ljust(20)}  {auc_txt} / {m.acc * 100.0:.2f}")
    return "\n".join(lines) + "\n"
