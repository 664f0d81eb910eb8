"""Procedurally drawn object corpus for desk-scale experiments.

Each class is a rectangular object with a fixed colour and texture drawn on a textured background;
boxes are exact, so the corpus has no annotation noise of its own.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .synthesis import iou

# No magenta-like hues: the marker colour must stay unambiguous.
PALETTE = [
    ("red block", (210, 40, 30), "solid"),
    ("green crate", (40, 170, 60), "hstripes"),
    ("blue panel", (40, 70, 210), "vstripes"),
    ("yellow tile", (225, 205, 40), "checker"),
    ("cyan frame", (40, 200, 210), "border"),
    ("orange bar", (240, 130, 20), "solid"),
    ("white sign", (235, 235, 235), "checker"),
    ("black slab", (25, 25, 25), "hstripes"),
    ("teal board", (20, 120, 110), "border"),
    ("brown box", (120, 75, 35), "vstripes"),
]


def _background(rng, size):
    coarse = rng.uniform(90, 170, size=(6, 6, 3)).astype(np.uint8)
    base = np.asarray(Image.fromarray(coarse).resize((size, size), Image.BICUBIC), dtype=np.float32)
    base += rng.normal(0, 6, size=base.shape)
    return np.clip(base, 0, 255).astype(np.uint8)


def _draw(pixels, pattern, box, color):
    """Paint a rectangular object whose extent is exactly ``box``."""
    x, y, w, h = box
    color = np.asarray(color, dtype=np.int16)
    dark = color // 2
    patch = np.empty((h, w, 3), dtype=np.int16)
    patch[:] = color
    yy, xx = np.mgrid[0:h, 0:w]
    if pattern == "hstripes":
        patch[(yy // 4) % 2 == 1] = dark
    elif pattern == "vstripes":
        patch[(xx // 4) % 2 == 1] = dark
    elif pattern == "checker":
        patch[((yy // 5) + (xx // 5)) % 2 == 1] = dark
    elif pattern == "border":
        t = max(2, min(w, h) // 6)
        patch[t:h - t, t:w - t] = dark
    elif pattern != "solid":
        raise ValueError(pattern)
    pixels[y:y + h, x:x + w] = patch.astype(np.uint8)


def _place(rng, size, taken, lo, hi):
    for _ in range(100):
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        box = (x, y, w, h)
        if all(iou(box, t) == 0 for t in taken):
            return box
    return None


def make_toy_corpus(root, n_classes: int = 8, images_per_class: int = 200, image_size: int = 192,
                    val_fraction: float = 0.2, extra_object_prob: float = 0.3,
                    object_size=(24, 64), seed: int = 0) -> dict:
    """Write PNG images plus ``train.json`` / ``val.json`` COCO files under ``root``.

    Every image holds one object of its own class and, with probability
    ``extra_object_prob``, one non-overlapping object of a random class.
    Returns the paths of the two annotation files and the image directory.
    """
    if not 1 <= n_classes <= len(PALETTE):
        raise ValueError(f"n_classes must be in 1..{len(PALETTE)}")
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    categories = [{"id": i + 1, "name": PALETTE[i][0]} for i in range(n_classes)]
    splits = {"train": {"images": [], "annotations": [], "categories": categories},
              "val": {"images": [], "annotations": [], "categories": categories}}
    ann_id = 1
    image_id = 1
    per_class_val = int(round(images_per_class * val_fraction))
    for cls in range(n_classes):
        for k in range(images_per_class):
            split = "val" if k < per_class_val else "train"
            pixels = _background(rng, image_size)
            classes = [cls]
            if rng.random() < extra_object_prob:
                classes.append(int(rng.integers(n_classes)))
            taken = []
            for c in classes:
                box = _place(rng, image_size, taken, *object_size)
                if box is None:
                    continue
                taken.append(box)
                _draw(pixels, PALETTE[c][2], box, PALETTE[c][1])
                splits[split]["annotations"].append(
                    {"id": ann_id, "image_id": image_id, "category_id": c + 1,
                     "bbox": [float(v) for v in box], "area": float(box[2] * box[3]), "iscrowd": 0})
                ann_id += 1
            name = f"{image_id:06d}.png"
            Image.fromarray(pixels).save(img_dir / name)
            splits[split]["images"].append(
                {"id": image_id, "file_name": f"images/{name}", "width": image_size, "height": image_size})
            image_id += 1
    out = {"root": str(root), "images": str(img_dir)}
    for split, doc in splits.items():
        path = root / f"{split}.json"
        path.write_text(json.dumps(doc))
        out[split] = str(path)
    return out
