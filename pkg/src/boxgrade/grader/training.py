"""Contrastive fine-tuning loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ..crops import CropSpec, crop_sample
from ..prompts import target_index
from .checkpoint import Checkpoint
from .encoders import EncoderPair, pixels_to_tensor
from .loss import build_target_matrix, contrastive_loss
from .sampling import TripletSampler

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.0
    dropout: float = 0.25
    micro_batch_size: int = 96
    effective_batch_size: int = 2496
    epochs_max: int = 15
    max_steps: int | None = None
    scheduler: str = "cosine"
    trainable_parts: str = "full"
    freeze_logit_scale: bool = False
    reduction: str = "target_ce"
    eval_every: int = 0  # optimizer steps; 0 = once per epoch
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.micro_batch_size < 2 or self.effective_batch_size < 2:
            raise ValueError("learning rate and batch sizes must be positive (batches >= 2)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.scheduler not in ("cosine", "constant"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.reduction not in ("target_ce", "pooled"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    @property
    def accumulation_steps(self) -> int:
        return max(1, round(self.effective_batch_size / self.micro_batch_size))


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]

    def write_log(self, path) -> None:
        with Path(path).open("w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def batch_embeddings(encoders: EncoderPair, pixels: torch.Tensor, prompt_indices, bank):
    """Image embeddings and the per-sample text embeddings (each unique prompt encoded once)."""
    img = encoders.encode_image(pixels)
    uniq, inverse = np.unique(np.asarray(prompt_indices), return_inverse=True)
    txt = encoders.encode_text([bank.prompts[i] for i in uniq])
    return img, txt[torch.from_numpy(inverse)]


def render_batch(samples, store, spec: CropSpec, rng) -> torch.Tensor:
    return pixels_to_tensor(np.stack([crop_sample(s, store, spec, rng).pixels for s in samples]))


def evaluate_accuracy(encoders: EncoderPair, bank, eval_pixels: torch.Tensor, eval_targets, chunk: int = 512) -> float:
    """(2n+1)-way argmax accuracy on pre-rendered crops."""
    was_training = encoders.training
    encoders.eval()
    with torch.no_grad():
        txt = encoders.encode_text(bank.prompts)
        preds = []
        for i in range(0, len(eval_pixels), chunk):
            img = encoders.encode_image(eval_pixels[i:i + chunk])
            preds.append((img @ txt.T).argmax(dim=1))
        pred = torch.cat(preds).numpy()
    encoders.train(was_training)
    return float(np.mean(pred == np.asarray(eval_targets)))


def train(samples, bank, encoders: EncoderPair, cfg: TrainConfig, store, crop_spec: CropSpec,
          categories=None, eval_samples=None, checkpoint_meta: dict | None = None) -> TrainResult:
    """Optimize the symmetric contrastive loss over triplet batches.

    Steps count optimizer updates; each update accumulates gradients over
    ``cfg.accumulation_steps`` micro-batches. Raises
    :class:`TrainingDiverged` with the last finite checkpoint if the loss
    turns NaN or infinite.
    """
    meta = dict(checkpoint_meta or {})
    meta.setdefault("train_config", asdict(cfg))
    meta.setdefault("crop_spec", asdict(crop_spec))
    categories = categories if categories is not None else meta.pop("categories", None)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    encoders.set_trainable(cfg.trainable_parts)
    params = [p for p in encoders.parameters() if p.requires_grad]
    sampler = TripletSampler(samples, bank, cfg.micro_batch_size, seed=cfg.seed)
    accum = cfg.accumulation_steps
    steps_per_epoch = max(1, sampler.batches_per_epoch() // accum)
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs_max * steps_per_epoch
    eval_every = cfg.eval_every or steps_per_epoch

    eval_pixels = eval_targets = None
    if eval_samples:
        det = crop_spec.deterministic()
        eval_pixels = render_batch(eval_samples, store, det, None)
        eval_targets = [target_index(s, bank) for s in eval_samples]

    def snapshot(step):
        return Checkpoint.capture(encoders, bank, categories, step=step, **meta)

    log: list[dict] = []
    last_good = snapshot(0)
    if total_steps <= 0 or not params:
        return TrainResult(last_good, log)

    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
                           weight_decay=cfg.weight_decay)
    if cfg.scheduler == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total_steps)
    else:
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda _: 1.0)

    batches = iter(sampler)
    encoders.train()
    for step in range(1, total_steps + 1):
        opt.zero_grad(set_to_none=True)
        parts = {"loss_image": 0.0, "loss_text": 0.0, "loss_total": 0.0}
        for _ in range(accum):
            batch = next(batches)
            pixels = render_batch(batch.samples, store, crop_spec, rng)
            img, txt = batch_embeddings(encoders, pixels, batch.prompt_indices, bank)
            target = build_target_matrix(batch.prompt_indices, dtype=img.dtype)
            out = contrastive_loss(img, txt, target, encoders.logit_scale, cfg.reduction)
            if not torch.isfinite(out.loss_total):
                raise TrainingDiverged(f"non-finite loss at step {step}", last_good)
            (out.loss_total / accum).backward()
            for k, v in out.item().items():
                parts[k] += v / accum
        lr = opt.param_groups[0]["lr"]
        opt.step()
        sched.step()
        rec = {"step": step, "lr": lr, **parts, "logit_scale": encoders.logit_scale.item()}
        if eval_pixels is not None and (step % eval_every == 0 or step == total_steps):
            rec["eval_accuracy"] = evaluate_accuracy(encoders, bank, eval_pixels, eval_targets)
            last_good = snapshot(step)
            logger.info("step %d loss %.4f eval acc %.4f", step, parts["loss_total"], rec["eval_accuracy"])
        log.append(rec)

    encoders.eval()
    return TrainResult(snapshot(total_steps), log)
