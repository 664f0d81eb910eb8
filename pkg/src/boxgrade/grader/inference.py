"""Grading crops against the prompt bank and the accept/reject rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..crops import CropSpec
from ..synthesis import BACKGROUND, BAD
from .checkpoint import Checkpoint
from .encoders import EncoderPair, pixels_to_tensor

ACCEPT = "accept"
CLASS_MISMATCH = "class_mismatch"
QUALITY_BAD = "quality_bad"
REJECT_BACKGROUND = "background"
BELOW_THRESHOLD = "below_threshold"
IO_ERROR = "io_error"
REJECT_REASONS = (CLASS_MISMATCH, QUALITY_BAD, REJECT_BACKGROUND, BELOW_THRESHOLD)


@dataclass(frozen=True)
class GradeResult:
    probabilities: np.ndarray
    predicted_index: int

    def top_k(self, k: int = 3) -> list[tuple[int, float]]:
        # stable sort keeps the lower index first on ties
        order = np.argsort(-self.probabilities, kind="stable")[:k]
        return [(int(i), float(self.probabilities[i])) for i in order]

    @classmethod
    def from_logits(cls, logits) -> "GradeResult":
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        return cls(p, int(np.argmax(p)))


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str
    probability: float


def decide(result: GradeResult, claimed_class: int, threshold: float, bank) -> Decision:
    """Accept iff the top prompt is the good prompt of ``claimed_class`` with enough probability.

    Thresholds above 1 reject everything.
    """
    if math.isnan(threshold) or threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    good = bank.good_index(claimed_class)
    p_good = float(result.probabilities[good])
    pred_class, pred_quality = bank.class_of(result.predicted_index)
    if pred_quality == BACKGROUND:
        return Decision(False, REJECT_BACKGROUND, p_good)
    if pred_class != claimed_class:
        return Decision(False, CLASS_MISMATCH, p_good)
    if pred_quality == BAD:
        return Decision(False, QUALITY_BAD, p_good)
    if p_good >= threshold:
        return Decision(True, ACCEPT, p_good)
    return Decision(False, BELOW_THRESHOLD, p_good)


class Grader:
    """A loaded checkpoint ready for inference; read-only after construction."""

    def __init__(self, encoders: EncoderPair, bank, categories=None, crop_spec: CropSpec | None = None):
        self.encoders = encoders.eval()
        self.bank = bank
        self.categories = categories
        self.crop_spec = crop_spec or CropSpec(output_resolution=encoders.resolution)
        with torch.no_grad():
            self.text_embeddings = encoders.encode_text(bank.prompts)
            self.logit_scale = float(encoders.logit_scale)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Grader":
        enc = ckpt.build_encoders()
        spec = CropSpec.from_dict(ckpt.crop_spec) if ckpt.crop_spec else None
        return cls(enc, ckpt.bank, ckpt.categories, spec)

    @property
    def inference_spec(self) -> CropSpec:
        return self.crop_spec.deterministic()

    def logits(self, pixels) -> np.ndarray:
        with torch.no_grad():
            img = self.encoders.encode_image(pixels_to_tensor(pixels))
            return (self.logit_scale * img @ self.text_embeddings.T).double().numpy()

    def grade_many(self, crops, batch_size: int = 256) -> list[GradeResult]:
        out = []
        for i in range(0, len(crops), batch_size):
            chunk = crops[i:i + batch_size]
            logits = self.logits(np.stack([c.pixels for c in chunk]))
            out.extend(GradeResult.from_logits(row) for row in logits)
        return out

    def grade(self, crop) -> GradeResult:
        return self.grade_many([crop])[0]


def grade(crop, grader: Grader) -> GradeResult:
    return grader.grade(crop)
