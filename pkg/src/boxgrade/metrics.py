"""Macro-averaged grading metrics, threshold sweeps and disagreement reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crops import crop_sample, dump_crop
from .grader.inference import GradeResult, decide
from .prompts import PromptBank
from .synthesis import BACKGROUND, BAD, GOOD

RECORDS_FORMAT = "boxgrade.records"
RECORDS_VERSION = 1


@dataclass
class EvalRecord:
    sample_ref: str
    true_quality: str
    true_class: int  # dense id; the background id n for background samples
    result: GradeResult
    image_id: int | None = None
    crop_path: str | None = None

    def to_json(self) -> dict:
        return {
            "sample_ref": self.sample_ref,
            "image_id": self.image_id,
            "true_quality": self.true_quality,
            "true_class": self.true_class,
            "probabilities": [float(p) for p in self.result.probabilities],
            "crop_path": self.crop_path,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalRecord":
        p = np.asarray(d["probabilities"], dtype=np.float64)
        # argmax keeps the lowest index on ties
        return cls(d["sample_ref"], d["true_quality"], int(d["true_class"]),
                   GradeResult(p, int(np.argmax(p))), d.get("image_id"), d.get("crop_path"))


@dataclass
class ClassMetrics:
    name: str
    n_good: int = 0
    n_bad: int = 0
    accepted_good: int = 0
    accepted_bad: int = 0

    @property
    def recall_good(self) -> float | None:
        return self.accepted_good / self.n_good if self.n_good else None

    @property
    def false_accept_bad(self) -> float | None:
        return self.accepted_bad / self.n_bad if self.n_bad else None

    def to_json(self) -> dict:
        return {**asdict(self), "recall_good": self.recall_good, "false_accept_bad": self.false_accept_bad}


@dataclass
class MetricsReport:
    overall_accuracy: float
    per_class: dict[int, ClassMetrics]
    mean_recall_good: float
    mean_false_accept_bad: float
    threshold_used: float
    n_records: int
    excluded_classes: list[int] = field(default_factory=list)
    accuracy_by_quality: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "mean_recall_good": self.mean_recall_good,
            "mean_false_accept_bad": self.mean_false_accept_bad,
            "threshold_used": self.threshold_used,
            "n_records": self.n_records,
            "excluded_classes": self.excluded_classes,
            "accuracy_by_quality": self.accuracy_by_quality,
            "per_class": {str(c): m.to_json() for c, m in sorted(self.per_class.items())},
        }


def compute_metrics(records, bank: PromptBank, threshold: float = 0.5) -> MetricsReport:
    """Per-class recall of good and false acceptance of bad, then unweighted class means.

    Background records count toward the argmax accuracy only.
    """
    if not records:
        raise ValueError("no records to evaluate")
    per_class = {c: ClassMetrics(bank.class_names[c]) for c in range(bank.n)}
    correct = {q: [0, 0] for q in (GOOD, BAD, BACKGROUND)}
    for r in records:
        target = bank.index_of(r.true_class, r.true_quality)
        hit = r.result.predicted_index == target
        correct[r.true_quality][0] += hit
        correct[r.true_quality][1] += 1
        if r.true_quality == BACKGROUND:
            continue
        cm = per_class[r.true_class]
        accepted = decide(r.result, r.true_class, threshold, bank).accepted
        if r.true_quality == GOOD:
            cm.n_good += 1
            cm.accepted_good += accepted
        else:
            cm.n_bad += 1
            cm.accepted_bad += accepted
    recalls = [m.recall_good for m in per_class.values() if m.n_good]
    fas = [m.false_accept_bad for m in per_class.values() if m.n_bad]
    excluded = [c for c, m in per_class.items() if not m.n_good and not m.n_bad]
    total_hits = sum(v[0] for v in correct.values())
    return MetricsReport(
        overall_accuracy=total_hits / len(records),
        per_class=per_class,
        mean_recall_good=float(np.mean(recalls)) if recalls else 0.0,
        mean_false_accept_bad=float(np.mean(fas)) if fas else 0.0,
        threshold_used=threshold,
        n_records=len(records),
        excluded_classes=excluded,
        accuracy_by_quality={q: v[0] / v[1] for q, v in correct.items() if v[1]},
    )


def grade_samples(samples, grader, store, crop_dump=None, batch_size: int = 256) -> list[EvalRecord]:
    """Render deterministic crops for ``samples`` and grade them."""
    spec = grader.inference_spec
    records = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        crops = [crop_sample(s, store, spec) for s in chunk]
        results = grader.grade_many(crops)
        for s, c, res in zip(chunk, crops, results):
            path = str(dump_crop(c, crop_dump)) if crop_dump else None
            records.append(EvalRecord(s.sample_id, s.quality, s.class_id, res, s.image_id, path))
    return records


def evaluate(samples, grader, store, threshold: float = 0.5, crop_dump=None):
    """Grade an evaluation manifest; returns ``(MetricsReport, records)``."""
    if not samples:
        raise ValueError("evaluation manifest is empty")
    records = grade_samples(samples, grader, store, crop_dump)
    return compute_metrics(records, grader.bank, threshold), records


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    mean_recall_good: float
    mean_false_accept_bad: float


def sweep_thresholds(records, grid, bank: PromptBank) -> list[CurvePoint]:
    """Re-apply the decision rule at each threshold; nothing is re-encoded."""
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    points = []
    for t in grid:
        rep = compute_metrics(records, bank, t)
        points.append(CurvePoint(t, rep.mean_recall_good, rep.mean_false_accept_bad))
    return points


def curve_area(points) -> float:
    """Trapezoidal area under recall (y) vs false acceptance (x).

    The curve is closed with the accept-nothing point (0, 0) and the
    accept-everything point (1, 1), as for an ROC curve.
    """
    chain = [(0.0, 0.0)]
    for p in sorted(points, key=lambda p: -p.threshold):
        chain.append((p.mean_false_accept_bad, p.mean_recall_good))
    chain.append((1.0, 1.0))
    xs = np.array([c[0] for c in chain])
    ys = np.array([c[1] for c in chain])
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2))


def threshold_grid(n: int = 21) -> list[float]:
    return [float(v) for v in np.linspace(0.0, 1.0, n)]


def disagreement_report(records, bank: PromptBank, k: int = 20) -> list[dict]:
    """Samples whose top prediction contradicts their tag, most confident first."""
    rows = []
    for r in records:
        target = bank.index_of(r.true_class, r.true_quality)
        pred = r.result.predicted_index
        if pred == target:
            continue
        conf = float(r.result.probabilities[pred])
        rows.append({
            "sample_ref": r.sample_ref,
            "image_id": r.image_id,
            "true_quality": r.true_quality,
            "true_prompt": bank.prompts[target],
            "predicted_index": pred,
            "predicted_prompt": bank.prompts[pred],
            "confidence": conf,
            "top3": [{"index": i, "prompt": bank.prompts[i], "probability": p}
                     for i, p in r.result.top_k(3)],
            "crop_path": r.crop_path,
        })
    rows.sort(key=lambda row: (-row["confidence"], row["sample_ref"]))
    return rows[:k]


def write_records(records, bank: PromptBank, path, run_config: dict | None = None) -> None:
    header = {"format": RECORDS_FORMAT, "version": RECORDS_VERSION, "prompt_bank": bank.to_json(),
              "run_config": run_config or {}}
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_records(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such records file: {path}")
    with path.open() as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty records file")
    header = json.loads(lines[0])
    if header.get("format") != RECORDS_FORMAT:
        raise ValueError(f"{path}: not an evaluation records file")
    bank = PromptBank.from_json(header["prompt_bank"])
    return [EvalRecord.from_json(json.loads(ln)) for ln in lines[1:]], bank, header


def write_curve_csv(points, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "recall", "false_accept"])
        for p in points:
            w.writerow([f"{p.threshold:.6g}", f"{p.mean_recall_good:.6f}", f"{p.mean_false_accept_bad:.6f}"])


def write_jsonl(rows, path) -> None:
    with Path(path).open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

