"""COCO-style annotation ingestion and the small-box filter."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

logger = logging.getLogger(__name__)

DATASET_FORMAT = "boxgrade.dataset"
DATASET_VERSION = 1
MIN_SIDE = 20.0


class AnnotationFormatError(ValueError):
    """Raised when an annotation document is missing a required key."""


class AnnotationIntegrityError(ValueError):
    """Raised when annotations reference images that do not exist."""


@dataclass(frozen=True)
class Category:
    index: int  # dense 0..n-1
    category_id: int  # id as written in the source file
    name: str


@dataclass(frozen=True)
class CategorySet:
    entries: tuple[Category, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a category set needs at least one class")
        ids = [c.category_id for c in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate category ids")
        for i, c in enumerate(self.entries):
            if c.index != i:
                raise ValueError("category indices must be dense and ordered")
            if not c.name:
                raise ValueError(f"category {c.category_id} has an empty name")

    @classmethod
    def from_pairs(cls, pairs) -> "CategorySet":
        """Build from ``(category_id, name)`` pairs, keeping their order."""
        return cls(tuple(Category(i, int(cid), str(name)) for i, (cid, name) in enumerate(pairs)))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.entries]

    def dense(self, category_id: int) -> int:
        for c in self.entries:
            if c.category_id == category_id:
                return c.index
        raise KeyError(f"unknown category id {category_id}")

    def original(self, index: int) -> int:
        return self.entries[index].category_id

    def to_json(self) -> list[dict]:
        return [{"id": c.category_id, "name": c.name} for c in self.entries]

    @classmethod
    def from_json(cls, items) -> "CategorySet":
        return cls.from_pairs((it["id"], it["name"]) for it in items)


@dataclass(frozen=True)
class GtBox:
    x: float
    y: float
    w: float
    h: float
    class_id: int  # dense index into the CategorySet
    annotation_id: int

    @property
    def xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: int
    file_path: str
    width: int
    height: int
    boxes: tuple[GtBox, ...] = ()


@dataclass(frozen=True)
class Dataset:
    images: tuple[AnnotatedImage, ...]
    categories: CategorySet
    dropped: dict = field(default_factory=dict, compare=False)

    @property
    def num_annotations(self) -> int:
        return sum(len(im.boxes) for im in self.images)

    def image(self, image_id: int) -> AnnotatedImage:
        for im in self.images:
            if im.image_id == image_id:
                return im
        raise KeyError(image_id)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise AnnotationFormatError(f"missing required key {key!r} in {where}")
    return obj[key]


def clamp_box(x, y, w, h, width, height):
    """Clip an xywh box to ``[0, width] x [0, height]``."""
    x1, y1 = max(0.0, float(x)), max(0.0, float(y))
    x2, y2 = min(float(width), float(x) + float(w)), min(float(height), float(y) + float(h))
    return x1, y1, x2 - x1, y2 - y1


def parse_coco(doc: dict) -> Dataset:
    """Parse an in-memory COCO document.

    Crowd annotations and boxes that are degenerate after clamping to the
    image are dropped; the counts land in ``Dataset.dropped``.
    """
    images_raw = _require(doc, "images", "document")
    anns_raw = _require(doc, "annotations", "document")
    cats_raw = _require(doc, "categories", "document")

    categories = CategorySet.from_pairs(
        (_require(c, "id", "category"), _require(c, "name", "category")) for c in cats_raw
    )

    meta = {}
    for im in images_raw:
        iid = int(_require(im, "id", "image"))
        meta[iid] = (
            str(_require(im, "file_name", "image")),
            int(_require(im, "width", "image")),
            int(_require(im, "height", "image")),
        )
        if meta[iid][1] <= 0 or meta[iid][2] <= 0:
            raise AnnotationFormatError(f"image {iid} has non-positive size")

    boxes: dict[int, list[GtBox]] = {iid: [] for iid in meta}
    dropped = {"crowd": 0, "degenerate": 0}
    for ann in anns_raw:
        iid = int(_require(ann, "image_id", "annotation"))
        aid = int(_require(ann, "id", "annotation"))
        bbox = _require(ann, "bbox", "annotation")
        cid = int(_require(ann, "category_id", "annotation"))
        if iid not in meta:
            raise AnnotationIntegrityError(f"annotation {aid} references unknown image_id {iid}")
        try:
            dense = categories.dense(cid)
        except KeyError:
            raise AnnotationIntegrityError(
                f"annotation {aid} references unknown category_id {cid}"
            ) from None
        if ann.get("iscrowd", 0):
            dropped["crowd"] += 1
            continue
        if len(bbox) != 4:
            raise AnnotationFormatError(f"annotation {aid}: bbox must have 4 numbers")
        _, width, height = meta[iid]
        x, y, w, h = clamp_box(*bbox, width, height)
        if bbox[2] <= 0 or bbox[3] <= 0 or w <= 0 or h <= 0:
            dropped["degenerate"] += 1
            continue
        boxes[iid].append(GtBox(x, y, w, h, dense, aid))

    images = tuple(
        AnnotatedImage(iid, fp, wd, ht, tuple(boxes[iid])) for iid, (fp, wd, ht) in meta.items()
    )
    if any(dropped.values()):
        logger.info("dropped annotations: %s", dropped)
    return Dataset(images, categories, dropped)


def parse_annotations(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise AnnotationFormatError(f"{path}: top level must be a JSON object")
    return parse_coco(doc)


def filter_small(dataset: Dataset, min_side: float = MIN_SIDE):
    """Drop boxes whose width AND height are both below ``min_side``.

    Returns the filtered dataset and a stats dict holding the removed
    fraction over annotations and over images (images left with no boxes).
    """
    kept_images = []
    removed = 0
    emptied = 0
    for im in dataset.images:
        keep = tuple(b for b in im.boxes if not (b.w < min_side and b.h < min_side))
        removed += len(im.boxes) - len(keep)
        if im.boxes and not keep:
            emptied += 1
        kept_images.append(replace(im, boxes=keep))
    total = dataset.num_annotations
    stats = {
        "removed_annotations": removed,
        "total_annotations": total,
        "removed_fraction": removed / total if total else 0.0,
        "emptied_images": emptied,
        "emptied_image_fraction": emptied / len(dataset.images) if dataset.images else 0.0,
    }
    return replace(dataset, images=tuple(kept_images)), stats


def _image_record(im: AnnotatedImage) -> dict:
    return {
        "image_id": im.image_id,
        "file_path": im.file_path,
        "width": im.width,
        "height": im.height,
        "boxes": [
            {"annotation_id": b.annotation_id, "class_id": b.class_id, "bbox": [b.x, b.y, b.w, b.h]}
            for b in im.boxes
        ],
    }


def write_dataset_manifest(dataset: Dataset, path, run_config: dict | None = None) -> None:
    """Write the dataset as JSONL: a header line, then one image per line."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "categories": dataset.categories.to_json(),
        "dropped": dataset.dropped,
        "run_config": run_config or {},
    }
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for im in dataset.images:
            fh.write(json.dumps(_image_record(im), sort_keys=True) + "\n")


def read_dataset_manifest(path) -> Dataset:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise AnnotationFormatError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise AnnotationFormatError(f"{path}: not a dataset manifest")
    categories = CategorySet.from_json(header["categories"])
    images = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        images.append(
            AnnotatedImage(
                rec["image_id"],
                rec["file_path"],
                rec["width"],
                rec["height"],
                tuple(
                    GtBox(*b["bbox"], class_id=b["class_id"], annotation_id=b["annotation_id"])
                    for b in rec["boxes"]
                ),
            )
        )
    return Dataset(tuple(images), categories, header.get("dropped", {}))


def load_dataset(path) -> Dataset:
    """Load either a COCO JSON file or a dataset JSONL manifest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such annotation file: {path}")
    with path.open() as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and head.get("format") == DATASET_FORMAT:
        return read_dataset_manifest(path)
    return parse_annotations(path)
