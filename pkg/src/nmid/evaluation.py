"""Scoring: Top-N accuracy, confusion matrix, per-class precision/recall/F1.

Unparseable responses (no predicted labels) count as misses and occupy a
dedicated confusion column; dropping them would inflate accuracy. Zero
denominators yield 0 with a flag so reports never carry undefined values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNPARSEABLE_COLUMN = "(unparseable)"
TOP_N_DEFAULT = (1, 2, 3, 5)


class EvaluationError(Exception):
    pass


@dataclass
class PredictionRecord:
    image_id: str
    true_label: str
    predicted: list[str]
    raw_text: str = ""

    def __post_init__(self):
        if len(set(self.predicted)) != len(self.predicted):
            raise EvaluationError(f"duplicate predictions for {self.image_id}")


@dataclass
class MetricsReport:
    labels: list[str]
    top_n: dict[int, float]
    confusion: np.ndarray  # (K, K+1); last column counts unparseable records
    per_class: dict[str, dict]
    n_records: int

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records,
            "top_n": {str(n): v for n, v in sorted(self.top_n.items())},
            "labels": self.labels,
            "confusion_columns": self.labels + [UNPARSEABLE_COLUMN],
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": self.per_class,
        }


def _validate(records: list[PredictionRecord], label_set: list[str]):
    if not records:
        raise EvaluationError("no prediction records to score")
    known = set(label_set)
    for rec in records:
        if rec.true_label not in known:
            raise EvaluationError(f"unknown true label {rec.true_label!r}")
        for p in rec.predicted:
            if p not in known:
                raise EvaluationError(f"unknown predicted label {p!r}")


def top_n_accuracy(records: list[PredictionRecord], n: int) -> float:
    """Fraction of records whose true label is among the first n predictions."""
    if n < 1:
        raise EvaluationError("n must be >= 1")
    if not records:
        raise EvaluationError("no prediction records to score")
    hits = sum(1 for rec in records if rec.true_label in rec.predicted[:n])
    return hits / len(records)


def confusion(records: list[PredictionRecord], label_set: list[str]) -> np.ndarray:
    """(K, K+1) counts: rows true label, columns top-1 prediction, with a
    trailing column for records that produced no prediction."""
    _validate(records, label_set)
    index = {label: i for i, label in enumerate(label_set)}
    k = len(label_set)
    matrix = np.zeros((k, k + 1), dtype=np.int64)
    for rec in records:
        row = index[rec.true_label]
        col = index[rec.predicted[0]] if rec.predicted else k
        matrix[row, col] += 1
    return matrix


def precision_recall_f1(matrix: np.ndarray, label_set: list[str]) -> dict[str, dict]:
    """Per-class metrics from a confusion matrix; 0/0 scores 0, flagged."""
    k = len(label_set)
    if matrix.shape != (k, k + 1):
        raise EvaluationError("confusion matrix shape does not match label set")
    out: dict[str, dict] = {}
    for i, label in enumerate(label_set):
        tp = float(matrix[i, i])
        fp = float(matrix[:, i].sum() - matrix[i, i])
        fn = float(matrix[i, :].sum() - matrix[i, i])
        flagged = False
        if tp + fp == 0:
            precision, flagged = 0.0, True
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall, flagged = 0.0, True
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0:
            f1, flagged = 0.0, True
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out[label] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": int(matrix[i, :].sum()),
            "flagged": flagged,
        }
    return out


def micro_recall(matrix: np.ndarray) -> float:
    total = matrix.sum()
    if total == 0:
        raise EvaluationError("empty confusion matrix")
    return float(np.trace(matrix[:, :-1])) / float(total)


def build_report(records: list[PredictionRecord], label_set: list[str],
                 top_ns: tuple[int, ...] = TOP_N_DEFAULT) -> MetricsReport:
    _validate(records, label_set)
    matrix = confusion(records, label_set)
    return MetricsReport(
        labels=list(label_set),
        top_n={n: top_n_accuracy(records, n) for n in top_ns},
        confusion=matrix,
        per_class=precision_recall_f1(matrix, label_set),
        n_records=len(records),
    )


def emit_report(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.csv (one row per class + summary) and
    confusion.csv. Field order is stable for diffing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    paths["json"] = json_path

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "support", "precision", "recall", "f1", "flagged"])
        for label in report.labels:
            row = report.per_class[label]
            writer.writerow([label, row["support"], f"{row['precision']:.6f}",
                             f"{row['recall']:.6f}", f"{row['f1']:.6f}",
                             int(row["flagged"])])
        writer.writerow(["(overall-top1)", report.n_records,
                         "", f"{report.top_n.get(1, micro_recall(report.confusion)):.6f}",
                         "", 0])
    paths["csv"] = csv_path

    conf_path = out / "confusion.csv"
    with open(conf_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + report.labels + [UNPARSEABLE_COLUMN])
        for i, label in enumerate(report.labels):
            writer.writerow([label] + report.confusion[i].astype(int).tolist())
    paths["confusion"] = conf_path
    return paths


# ---------------------------------------------------------------------------
# Prediction persistence
# ---------------------------------------------------------------------------


def save_predictions(records: list[PredictionRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "image_id": rec.image_id,
                "true_label": rec.true_label,
                "predicted": rec.predicted,
                "raw_text": rec.raw_text,
            }) + "\n")
    return path


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            records.append(PredictionRecord(
                image_id=row["image_id"], true_label=row["true_label"],
                predicted=row["predicted"], raw_text=row.get("raw_text", "")))
    return records
