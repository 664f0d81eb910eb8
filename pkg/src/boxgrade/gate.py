"""Screening detector pseudo-labels with a trained grader."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .crops import plan_crop, render
from .dataset import clamp_box
from .grader.inference import IO_ERROR, REJECT_REASONS, decide

logger = logging.getLogger(__name__)

UNKNOWN_CLASS = "unknown_class"
INVALID_BOX = "invalid_box"
GATE_REASONS = REJECT_REASONS + (IO_ERROR, UNKNOWN_CLASS, INVALID_BOX)


@dataclass(frozen=True)
class PseudoLabel:
    """One detector output. ``class_id`` is the dataset's own category id."""

    image: str
    box: tuple[float, float, float, float]
    class_id: int
    detector_score: float = 1.0
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_json(cls, d: dict) -> "PseudoLabel":
        score = float(d.get("detector_score", 1.0))
        if not 0 <= score <= 1:
            raise ValueError(f"detector_score {score} outside [0, 1]")
        return cls(str(d["image"]), tuple(float(v) for v in d["box"]), int(d["class_id"]), score, dict(d))

    def to_json(self) -> dict:
        if self.raw:
            return dict(self.raw)
        return {"image": self.image, "box": list(self.box), "class_id": self.class_id,
                "detector_score": self.detector_score}


@dataclass
class GateStats:
    total: int = 0
    retained: int = 0
    reasons: dict = field(default_factory=lambda: {r: 0 for r in GATE_REASONS})
    threshold: float | None = None

    @property
    def filtered_fraction(self) -> float:
        return 1 - self.retained / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {"total": self.total, "retained": self.retained,
                "filtered_fraction": self.filtered_fraction, "reasons": dict(self.reasons),
                "threshold": self.threshold}


def gate_batch(labels, grader, store, threshold: float):
    """Grade every pseudo-label and keep those the decision rule accepts.

    Returns ``(retained, stats, decisions)``; ``retained`` keeps input order
    and ``decisions`` holds one ``(label, reason)`` pair per input.
    """
    spec = grader.inference_spec
    categories = grader.categories
    stats = GateStats(total=len(labels), threshold=threshold)
    retained, decisions = [], []

    def reject(label, reason):
        stats.reasons[reason] += 1
        decisions.append((label, reason))

    for label in labels:
        try:
            claimed = categories.dense(label.class_id) if categories is not None else label.class_id
            grader.bank.good_index(claimed)
        except KeyError:
            reject(label, UNKNOWN_CLASS)
            continue
        try:
            pixels = store(label.image)
        except OSError as exc:
            logger.warning("%s", exc)
            reject(label, IO_ERROR)
            continue
        h, w = pixels.shape[:2]
        box = clamp_box(*label.box, w, h)
        if box[2] <= 0 or box[3] <= 0:
            reject(label, INVALID_BOX)
            continue
        window = plan_crop(box, (w, h), spec)
        result = grader.grade(render(pixels, box, window, spec))
        d = decide(result, claimed, threshold, grader.bank)
        if d.accepted:
            retained.append(label)
            decisions.append((label, d.reason))
        else:
            reject(label, d.reason)
    stats.retained = len(retained)
    return retained, stats, decisions


def read_pseudo_labels(path) -> list[PseudoLabel]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such pseudo-label file: {path}")
    with path.open() as fh:
        return [PseudoLabel.from_json(json.loads(ln)) for ln in fh if ln.strip()]


def write_pseudo_labels(labels, path) -> None:
    with Path(path).open("w") as fh:
        for lb in labels:
            fh.write(json.dumps(lb.to_json(), sort_keys=True) + "\n")
