"""Marker rendering and randomized square context crops."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

PAD_VALUE = 128


@dataclass(frozen=True)
class CropSpec:
    side_factor_min: float = 1.2
    side_factor_max: float = 1.5
    marker_thickness: int = 3
    marker_color: tuple[int, int, int] = (255, 0, 255)
    output_resolution: int = 336
    center_jitter: bool = True

    def __post_init__(self):
        if not 1 < self.side_factor_min <= self.side_factor_max:
            raise ValueError("need 1 < side_factor_min <= side_factor_max")
        if self.marker_thickness < 1:
            raise ValueError("marker_thickness must be >= 1")
        if self.output_resolution < 1:
            raise ValueError("output_resolution must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CropSpec":
        d = dict(d)
        if "marker_color" in d:
            d["marker_color"] = tuple(d["marker_color"])
        return cls(**d)

    def deterministic(self, side_factor: float = 1.35) -> "CropSpec":
        """Jitter-free spec with a fixed side factor, used at inference."""
        return CropSpec(side_factor, side_factor, self.marker_thickness, tuple(self.marker_color),
                        self.output_resolution, center_jitter=False)


@dataclass(frozen=True)
class CropWindow:
    x: float
    y: float
    side: float
    side_factor: float
    edge_adjusted: bool = False

    def contains(self, box, strict: bool = True) -> bool:
        bx, by, bw, bh = box
        x2, y2 = self.x + self.side, self.y + self.side
        if strict:
            return self.x < bx and self.y < by and bx + bw < x2 and by + bh < y2
        return self.x <= bx and self.y <= by and bx + bw <= x2 and by + bh <= y2


@dataclass(frozen=True)
class CropSample:
    pixels: np.ndarray  # (R, R, 3) uint8
    crop_window: CropWindow
    sample_ref: str


def _place(lo_box, hi_box, side, extent, margin, rng, jitter):
    """Pick the window origin on one axis; returns (origin, shifted)."""
    lo = hi_box + margin - side
    hi = lo_box - margin
    if lo > hi:  # no room for the margin
        lo = hi = (lo_box + hi_box - side) / 2
    if jitter:
        origin = rng.uniform(lo, hi) if hi > lo else lo
    else:
        origin = (lo_box + hi_box - side) / 2
    if side <= extent:
        # Shift inward so the window stays on the image; the box stays covered
        # because the feasible ranges always intersect.
        inner_lo, inner_hi = max(lo, 0.0), min(hi, extent - side)
        if inner_lo > inner_hi:
            inner_lo, inner_hi = max(hi_box - side, 0.0), min(lo_box, extent - side)
        clipped = min(max(origin, inner_lo), inner_hi)
        return clipped, not math.isclose(clipped, origin, abs_tol=1e-9)
    # Window wider than the image on this axis: cover all of it, pad evenly.
    return (extent - side) / 2, True


def plan_crop(box, image_dims, spec: CropSpec, rng: np.random.Generator | None = None) -> CropWindow:
    """Plan a square window around ``box`` inside an image of ``(width, height)``.

    The side is ``r * max(w, h)`` with ``r`` drawn uniformly from the
    spec's factor range. With jitter on, the window origin is uniform over
    the positions that keep the marker frame inside the window. Windows
    that spill over the image edge are shifted inward; ``edge_adjusted``
    records that the sampled placement was changed.
    """
    width, height = image_dims
    bx, by, bw, bh = box
    if rng is None:
        rng = np.random.default_rng(0)
    if spec.side_factor_max > spec.side_factor_min:
        r = float(rng.uniform(spec.side_factor_min, spec.side_factor_max))
    else:
        r = spec.side_factor_min
    side = r * max(bw, bh)
    capped = False
    if side > width and side > height:
        side = float(max(width, height, max(bw, bh)))
        capped = True
    margin = spec.marker_thickness // 2 + 0.5
    x, sx = _place(bx, bx + bw, side, width, margin, rng, spec.center_jitter)
    y, sy = _place(by, by + bh, side, height, margin, rng, spec.center_jitter)
    return CropWindow(x, y, side, side / max(bw, bh), capped or sx or sy)


def draw_marker(pixels: np.ndarray, box, color=(255, 0, 255), thickness: int = 3) -> np.ndarray:
    """Return a copy of ``pixels`` with a frame drawn centred on the box boundary.

    The frame spans ``thickness`` pixels straddling the edge (for the
    default 3: one inside, one on, one outside) and is clipped to the image.
    """
    out = pixels.copy()
    h_img, w_img = out.shape[:2]
    bx, by, bw, bh = box
    x1, y1 = int(round(bx)), int(round(by))
    x2, y2 = int(round(bx + bw)) - 1, int(round(by + bh)) - 1
    x2, y2 = max(x2, x1), max(y2, y1)
    color = np.asarray(color, dtype=out.dtype)
    inside = (thickness - 1) // 2
    outside = thickness - 1 - inside
    for off in range(-outside, inside + 1):
        # off > 0 moves the outline inward
        l, t, r, b = x1 + off, y1 + off, x2 - off, y2 - off
        if l > r or t > b:
            continue
        cl, cr = max(l, 0), min(r, w_img - 1)
        ct, cb = max(t, 0), min(b, h_img - 1)
        if cl > cr or ct > cb:
            continue
        if 0 <= t < h_img:
            out[t, cl:cr + 1] = color
        if 0 <= b < h_img:
            out[b, cl:cr + 1] = color
        if 0 <= l < w_img:
            out[ct:cb + 1, l] = color
        if 0 <= r < w_img:
            out[ct:cb + 1, r] = color
    return out


def extract_window(pixels: np.ndarray, window: CropWindow, fill: int = PAD_VALUE) -> np.ndarray:
    """Cut the square window out of ``pixels``, padding outside the image."""
    h_img, w_img = pixels.shape[:2]
    x0 = int(math.floor(window.x))
    y0 = int(math.floor(window.y))
    side = max(1, int(math.ceil(window.x + window.side)) - x0, int(math.ceil(window.y + window.side)) - y0)
    out = np.full((side, side, pixels.shape[2]), fill, dtype=pixels.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, w_img), min(y0 + side, h_img)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = pixels[sy0:sy1, sx0:sx1]
    return out


def render(pixels: np.ndarray, box, window: CropWindow, spec: CropSpec, sample_ref: str = "") -> CropSample:
    """Draw the marker, crop the window and resize to the encoder resolution."""
    marked = draw_marker(pixels, box, spec.marker_color, spec.marker_thickness)
    crop = extract_window(marked, window)
    res = spec.output_resolution
    if crop.shape[0] != res:
        crop = np.asarray(Image.fromarray(crop).resize((res, res), Image.BILINEAR))
    return CropSample(np.ascontiguousarray(crop), window, sample_ref)


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


class ImageStore:
    """Loads images relative to a root directory with a bounded cache."""

    def __init__(self, root=".", cache_size: int = 4096):
        self.root = Path(root)
        self._load = lru_cache(maxsize=cache_size)(self._read)

    def _read(self, file_path: str) -> np.ndarray:
        pixels = load_image(self.root / file_path)
        pixels.flags.writeable = False
        return pixels

    def __call__(self, file_path: str) -> np.ndarray:
        return self._load(file_path)


def crop_sample(sample, store: ImageStore, spec: CropSpec, rng=None) -> CropSample:
    """Plan and render the crop for one ``BoxSample``."""
    pixels = store(sample.file_path)
    window = plan_crop(sample.box, (pixels.shape[1], pixels.shape[0]), spec, rng)
    return render(pixels, sample.box, window, spec, sample.sample_id)


def dump_crop(crop: CropSample, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{crop.sample_ref}.png"
    Image.fromarray(crop.pixels).save(path)
    return path
