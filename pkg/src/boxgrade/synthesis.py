"""Good / bad / background box synthesis under IoU constraints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import AnnotatedImage, CategorySet, Dataset, GtBox

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "boxgrade.samples"
MANIFEST_VERSION = 1

GOOD, BAD, BACKGROUND = "good", "bad", "background"
QUALITIES = (GOOD, BAD, BACKGROUND)

# Bad-box perturbation ranges.
SHIFT_FRACTION = 0.35
SCALE_RANGE = (0.7, 1.3)
# Background box geometry.
BACKGROUND_MIN_SIDE = 20.0
ASPECT_RANGE = (1 / 3, 3.0)


class SynthesisSkip(Exception):
    """No valid box was found within the rejection budget."""


def iou(a, b) -> float:
    """Intersection over union of two ``(x, y, w, h)`` boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class SynthesisConfig:
    bad_iou_min: float = 0.5
    bad_iou_max: float = 0.8
    background_iou_max: float = 0.2
    max_rejection_attempts: int = 50
    background_per_image: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.bad_iou_min < self.bad_iou_max <= 1:
            raise ValueError("need 0 < bad_iou_min < bad_iou_max <= 1")
        if not 0 <= self.background_iou_max < self.bad_iou_min:
            raise ValueError("need 0 <= background_iou_max < bad_iou_min")
        if self.max_rejection_attempts < 1:
            raise ValueError("max_rejection_attempts must be positive")
        if self.background_per_image < 0:
            raise ValueError("background_per_image must be >= 0")


@dataclass(frozen=True)
class BoxSample:
    sample_id: str
    image_id: int
    file_path: str
    box: tuple[float, float, float, float]
    class_id: int  # dense class; background samples carry the background id n
    quality: str
    source_annotation_id: int | None
    rng_seed: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["box"] = list(self.box)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "BoxSample":
        return cls(
            sample_id=d["sample_id"],
            image_id=int(d["image_id"]),
            file_path=d["file_path"],
            box=tuple(float(v) for v in d["box"]),
            class_id=int(d["class_id"]),
            quality=d["quality"],
            source_annotation_id=d.get("source_annotation_id"),
            rng_seed=int(d["rng_seed"]),
        )


@dataclass
class SampleManifest:
    samples: list[BoxSample]
    categories: CategorySet
    config: SynthesisConfig
    notes: list[dict] = field(default_factory=list)
    run_config: dict = field(default_factory=dict)

    @property
    def background_id(self) -> int:
        return self.categories.n

    def header(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "categories": self.categories.to_json(),
            "synthesis_config": asdict(self.config),
            "notes": self.notes,
            "run_config": self.run_config,
            "counts": self.counts(),
        }

    def counts(self) -> dict:
        out = {q: 0 for q in QUALITIES}
        for s in self.samples:
            out[s.quality] += 1
        return out

    def write(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for s in self.samples:
                fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "SampleManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such manifest: {path}")
        with path.open() as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty manifest file")
        header = json.loads(lines[0])
        if header.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{path}: not a sample manifest")
        return cls(
            samples=[BoxSample.from_json(json.loads(ln)) for ln in lines[1:]],
            categories=CategorySet.from_json(header["categories"]),
            config=SynthesisConfig(**header["synthesis_config"]),
            notes=header.get("notes", []),
            run_config=header.get("run_config", {}),
        )


def image_seed(seed: int, image_id: int) -> int:
    """Seed of the per-image substream, independent of iteration order."""
    return int(np.random.SeedSequence([seed, image_id]).generate_state(1, np.uint32)[0])


def perturb_bad(gt: GtBox, img_bounds, cfg: SynthesisConfig, rng: np.random.Generator):
    """Randomly shift and rescale ``gt`` until its IoU with ``gt`` lands in the bad window.

    ``img_bounds`` is ``(width, height)``. Raises :class:`SynthesisSkip`
    once ``cfg.max_rejection_attempts`` candidates have been rejected.
    """
    width, height = img_bounds
    ref = gt.xywh
    cx, cy = gt.x + gt.w / 2, gt.y + gt.h / 2
    # per-axis reach keeps the acceptance rate independent of aspect ratio
    reach = SHIFT_FRACTION * np.array([gt.w, gt.h])
    for _ in range(cfg.max_rejection_attempts):
        dx, dy = rng.uniform(-reach, reach)
        sw, sh = rng.uniform(*SCALE_RANGE, size=2)
        w, h = gt.w * sw, gt.h * sh
        x, y = cx + dx - w / 2, cy + dy - h / 2
        x1, y1 = max(0.0, x), max(0.0, y)
        x2, y2 = min(float(width), x + w), min(float(height), y + h)
        if x2 - x1 < 1 or y2 - y1 < 1:
            continue
        box = (x1, y1, x2 - x1, y2 - y1)
        v = iou(box, ref)
        if cfg.bad_iou_min <= v <= cfg.bad_iou_max:
            return box
    raise SynthesisSkip(f"annotation {gt.annotation_id}: no bad box in {cfg.max_rejection_attempts} tries")


def sample_background(image: AnnotatedImage, cfg: SynthesisConfig, rng: np.random.Generator):
    """Draw a box overlapping no ground-truth box by more than ``background_iou_max``.

    The shorter box side is log-uniform in ``[20, min(W, H) / 2]`` and the
    aspect ratio uniform in ``[1/3, 3]``.
    """
    short = min(image.width, image.height)
    if short < BACKGROUND_MIN_SIDE:
        raise SynthesisSkip(f"image {image.image_id} is smaller than {BACKGROUND_MIN_SIDE} px")
    log_lo = math.log(BACKGROUND_MIN_SIDE)
    log_hi = math.log(max(short / 2, BACKGROUND_MIN_SIDE))
    gts = [b.xywh for b in image.boxes]
    for _ in range(cfg.max_rejection_attempts):
        side = math.exp(rng.uniform(log_lo, log_hi))
        ar = rng.uniform(*ASPECT_RANGE)
        w, h = (side * ar, side) if ar >= 1 else (side, side / ar)
        if w > image.width or h > image.height:
            continue
        x = rng.uniform(0, image.width - w)
        y = rng.uniform(0, image.height - h)
        box = (x, y, w, h)
        if all(iou(box, g) <= cfg.background_iou_max for g in gts):
            return box
    raise SynthesisSkip(f"image {image.image_id}: no background box in {cfg.max_rejection_attempts} tries")


def synthesize_image(image: AnnotatedImage, background_id: int, cfg: SynthesisConfig):
    """All samples and skip notes for one image, drawn from its own substream."""
    seed = image_seed(cfg.seed, image.image_id)
    rng = np.random.default_rng(seed)
    samples, notes = [], []

    def make(kind, k, box, cls, ann):
        return BoxSample(
            f"{image.image_id}-{kind}-{k}", image.image_id, image.file_path,
            tuple(float(v) for v in box), cls, kind, ann, seed,
        )

    for k, gt in enumerate(image.boxes):
        samples.append(make(GOOD, k, gt.xywh, gt.class_id, gt.annotation_id))
    for k, gt in enumerate(image.boxes):
        try:
            box = perturb_bad(gt, (image.width, image.height), cfg, rng)
        except SynthesisSkip as exc:
            notes.append({"image_id": image.image_id, "annotation_id": gt.annotation_id,
                          "quality": BAD, "reason": str(exc)})
            continue
        samples.append(make(BAD, k, box, gt.class_id, gt.annotation_id))
    for k in range(cfg.background_per_image):
        try:
            box = sample_background(image, cfg, rng)
        except SynthesisSkip as exc:
            notes.append({"image_id": image.image_id, "annotation_id": None,
                          "quality": BACKGROUND, "reason": str(exc)})
            continue
        samples.append(make(BACKGROUND, k, box, background_id, None))
    return samples, notes


def synthesize(dataset: Dataset, cfg: SynthesisConfig, workers: int = 1) -> SampleManifest:
    """Synthesize good, bad and background samples for every image.

    Output is identical for any ``workers`` value because each image
    draws from a substream keyed on ``(cfg.seed, image_id)``.
    """
    bg = dataset.categories.n
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(synthesize_image, dataset.images,
                                  [bg] * len(dataset.images), [cfg] * len(dataset.images)))
    else:
        parts = [synthesize_image(im, bg, cfg) for im in dataset.images]
    samples = [s for part, _ in parts for s in part]
    notes = [n for _, part in parts for n in part]
    if notes:
        logger.info("%d synthesis skips", len(notes))
    return SampleManifest(samples, dataset.categories, cfg, notes)


def validate_manifest(manifest: SampleManifest, dataset: Dataset) -> list[str]:
    """Re-measure every sample against the ground truth; return violations."""
    cfg = manifest.config
    by_image = {im.image_id: im for im in dataset.images}
    problems = []
    for s in manifest.samples:
        im = by_image.get(s.image_id)
        if im is None:
            problems.append(f"{s.sample_id}: unknown image {s.image_id}")
            continue
        x, y, w, h = s.box
        if x < 0 or y < 0 or x + w > im.width + 1e-9 or y + h > im.height + 1e-9:
            problems.append(f"{s.sample_id}: box outside image")
        gts = {b.annotation_id: b for b in im.boxes}
        if s.quality == GOOD:
            gt = gts.get(s.source_annotation_id)
            if gt is None or gt.xywh != s.box:
                problems.append(f"{s.sample_id}: good box differs from its ground truth")
        elif s.quality == BAD:
            gt = gts.get(s.source_annotation_id)
            v = iou(s.box, gt.xywh) if gt else -1.0
            if not cfg.bad_iou_min <= v <= cfg.bad_iou_max:
                problems.append(f"{s.sample_id}: bad IoU {v:.4f} outside window")
        elif s.quality == BACKGROUND:
            worst = max((iou(s.box, g.xywh) for g in im.boxes), default=0.0)
            if worst > cfg.background_iou_max:
                problems.append(f"{s.sample_id}: background IoU {worst:.4f} too high")
            if min(w, h) < BACKGROUND_MIN_SIDE:
                problems.append(f"{s.sample_id}: background box under {BACKGROUND_MIN_SIDE} px")
        else:
            problems.append(f"{s.sample_id}: unknown quality {s.quality!r}")
    return problems
