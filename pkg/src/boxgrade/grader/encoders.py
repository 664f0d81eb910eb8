"""Image/text encoder pairs.

Two families share one interface: small toy towers that train in seconds
on a CPU, and an adapter around a pretrained CLIP checkpoint from
``transformers``.
"""

from __future__ import annotations

import math
import re

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

TRAINABLE_PARTS = ("vision_only", "text_only", "full")
LOGIT_SCALE_INIT = math.log(1 / 0.07)
LOGIT_SCALE_MAX = 100.0
LOGIT_SCALE_MIN = 1e-2


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def pixels_to_tensor(pixels) -> torch.Tensor:
    """uint8 ``(N, R, R, 3)`` or ``(R, R, 3)`` array -> float ``(N, 3, R, R)`` in [0, 1]."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2).float().div_(255.0)


class EncoderPair(nn.Module):
    """Base class: two towers mapping into a shared unit-norm space."""

    kind = "base"
    resolution: int

    def __init__(self, freeze_logit_scale: bool = False):
        super().__init__()
        self.log_logit_scale = nn.Parameter(torch.tensor(LOGIT_SCALE_INIT))
        self.freeze_logit_scale = freeze_logit_scale
        self.trainable_parts = "full"

    @property
    def logit_scale(self) -> torch.Tensor:
        return self.log_logit_scale.exp().clamp(LOGIT_SCALE_MIN, LOGIT_SCALE_MAX)

    def vision_parameters(self):
        raise NotImplementedError

    def text_parameters(self):
        raise NotImplementedError

    def set_trainable(self, parts: str) -> None:
        if parts not in TRAINABLE_PARTS:
            raise ValueError(f"trainable_parts must be one of {TRAINABLE_PARTS}")
        self.trainable_parts = parts
        for p in self.vision_parameters():
            p.requires_grad_(parts in ("vision_only", "full"))
        for p in self.text_parameters():
            p.requires_grad_(parts in ("text_only", "full"))
        self.log_logit_scale.requires_grad_(not self.freeze_logit_scale)

    def check_resolution(self, images: torch.Tensor) -> None:
        if images.shape[-1] != self.resolution or images.shape[-2] != self.resolution:
            raise ValueError(
                f"crop is {tuple(images.shape[-2:])} but the encoder expects "
                f"{self.resolution}x{self.resolution}"
            )

    def encode_image(self, pixels) -> torch.Tensor:
        raise NotImplementedError

    def encode_text(self, texts: list[str]) -> torch.Tensor:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError


class ToyVisionTower(nn.Module):
    def __init__(self, dim: int, width: int, dropout: float):
        super().__init__()
        def block(cin, cout, k, stride):
            return [nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
                    nn.BatchNorm2d(cout), nn.ReLU()]

        self.net = nn.Sequential(
            *block(3, width, 5, 1),
            *block(width, width, 3, 2),
            *block(width, 2 * width, 3, 2),
            *block(2 * width, 2 * width, 3, 2),
            *block(2 * width, 4 * width, 3, 2),
        )
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(8 * width, dim)

    def forward(self, x):
        h = self.net(x)
        h = torch.cat([h.mean(dim=(2, 3)), h.amax(dim=(2, 3))], dim=1)
        return self.head(self.drop(h))


class ToyTextTower(nn.Module):
    def __init__(self, vocab: list[str], dim: int, dropout: float):
        super().__init__()
        self.vocab = {w: i + 1 for i, w in enumerate(vocab)}  # 0 = unknown
        self.bag = nn.EmbeddingBag(len(vocab) + 1, dim, mode="mean")
        self.drop = nn.Dropout(dropout)
        self.proj = nn.Linear(dim, dim)

    def forward(self, texts: list[str]):
        ids, offsets = [], []
        for t in texts:
            offsets.append(len(ids))
            toks = [self.vocab.get(w, 0) for w in tokenize(t)] or [0]
            ids.extend(toks)
        dev = self.bag.weight.device
        h = self.bag(torch.tensor(ids, device=dev), torch.tensor(offsets, device=dev))
        return self.proj(self.drop(h))


class ToyEncoderPair(EncoderPair):
    """Small CNN over crop pixels and a bag-of-words prompt encoder."""

    kind = "toy"

    def __init__(self, vocab, dim: int = 64, resolution: int = 64, width: int = 32,
                 dropout: float = 0.25, freeze_logit_scale: bool = False, seed: int = 0):
        super().__init__(freeze_logit_scale)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.vision = ToyVisionTower(dim, width, dropout)
            self.text = ToyTextTower(sorted(set(vocab)), dim, dropout)
        finally:
            torch.random.set_rng_state(gen_state)
        self.resolution = resolution
        self._cfg = {"vocab": sorted(set(vocab)), "dim": dim, "resolution": resolution,
                     "width": width, "dropout": dropout, "freeze_logit_scale": freeze_logit_scale,
                     "seed": seed}

    @classmethod
    def for_prompts(cls, prompts, **kw) -> "ToyEncoderPair":
        vocab = {w for p in prompts for w in tokenize(p)}
        return cls(vocab, **kw)

    def vision_parameters(self):
        return self.vision.parameters()

    def text_parameters(self):
        return self.text.parameters()

    def encode_image(self, pixels) -> torch.Tensor:
        x = pixels if torch.is_tensor(pixels) else pixels_to_tensor(pixels)
        self.check_resolution(x)
        return F.normalize(self.vision(x - 0.5), dim=-1)

    def encode_text(self, texts) -> torch.Tensor:
        return F.normalize(self.text(list(texts)), dim=-1)

    def config(self) -> dict:
        return dict(self._cfg)


CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class ClipAdapter(EncoderPair):
    """Wraps a ``transformers`` CLIPModel and its tokenizer.

    Dropout is set on both towers through the model config. Mixed
    precision, gradient checkpointing and attention kernels are left to
    the wrapped model.
    """

    kind = "clip"

    def __init__(self, model, tokenizer, dropout: float = 0.25, name: str | None = None,
                 freeze_logit_scale: bool = False):
        super().__init__(freeze_logit_scale)
        self.model = model
        self.tokenizer = tokenizer
        for sub in (model.config.vision_config, model.config.text_config):
            sub.dropout = dropout
            sub.attention_dropout = dropout
        for m in model.modules():
            if isinstance(m, nn.Dropout):
                m.p = dropout
        self.resolution = int(model.config.vision_config.image_size)
        with torch.no_grad():
            self.log_logit_scale.copy_(model.logit_scale.detach())
        self.register_buffer("_mean", torch.tensor(CLIP_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("_std", torch.tensor(CLIP_STD).view(1, 3, 1, 1), persistent=False)
        self._cfg = {"name": name, "dropout": dropout, "freeze_logit_scale": freeze_logit_scale}

    @classmethod
    def from_pretrained(cls, name: str = "openai/clip-vit-large-patch14-336", **kw) -> "ClipAdapter":
        from transformers import CLIPModel, CLIPTokenizer

        return cls(CLIPModel.from_pretrained(name), CLIPTokenizer.from_pretrained(name), name=name, **kw)

    def vision_parameters(self):
        return list(self.model.vision_model.parameters()) + list(self.model.visual_projection.parameters())

    def text_parameters(self):
        return list(self.model.text_model.parameters()) + list(self.model.text_projection.parameters())

    def encode_image(self, pixels) -> torch.Tensor:
        x = pixels if torch.is_tensor(pixels) else pixels_to_tensor(pixels)
        self.check_resolution(x)
        x = (x.to(self._mean.device) - self._mean) / self._std
        pooled = self.model.vision_model(pixel_values=x).pooler_output
        return F.normalize(self.model.visual_projection(pooled), dim=-1)

    def encode_text(self, texts) -> torch.Tensor:
        tok = self.tokenizer(list(texts), padding=True, truncation=True, return_tensors="pt")
        tok = {k: v.to(self._mean.device) for k, v in tok.items()}
        pooled = self.model.text_model(**tok).pooler_output
        return F.normalize(self.model.text_projection(pooled), dim=-1)

    def config(self) -> dict:
        return dict(self._cfg)


def build_encoders(kind: str, config: dict) -> EncoderPair:
    if kind == "toy":
        return ToyEncoderPair(**config)
    if kind == "clip":
        if not config.get("name"):
            raise ValueError("clip checkpoints need the pretrained model name to rebuild")
        return ClipAdapter.from_pretrained(**config)
    raise ValueError(f"unknown encoder kind {kind!r}")
