"""Desk-scale presets: toy corpus, toy encoders, CPU-sized training."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

from .crops import CropSpec, ImageStore
from .dataset import filter_small, parse_annotations
from .grader.encoders import ToyEncoderPair
from .grader.training import TrainConfig, train
from .prompts import build_prompts
from .synthesis import SynthesisConfig, synthesize
from .toy import make_toy_corpus

RESOLUTION = 64
CROP_SPEC = CropSpec(output_resolution=RESOLUTION)
TRAIN_CONFIG = TrainConfig(
    learning_rate=3e-3,
    dropout=0.0,
    micro_batch_size=128,
    effective_batch_size=128,
    max_steps=200,
    eval_every=25,
)


@dataclass
class DeskCorpus:
    root: Path
    train_dataset: object
    val_dataset: object
    train_manifest: object
    val_manifest: object
    bank: object
    store: ImageStore


def build_corpus(root, seed: int = 0, n_classes: int = 8, images_per_class: int = 200) -> DeskCorpus:
    """Draw the toy corpus and synthesize train/val sample manifests."""
    paths = make_toy_corpus(root, n_classes=n_classes, images_per_class=images_per_class, seed=seed)
    train_ds, _ = filter_small(parse_annotations(paths["train"]))
    val_ds, _ = filter_small(parse_annotations(paths["val"]))
    train_m = synthesize(train_ds, SynthesisConfig(seed=seed))
    val_m = synthesize(val_ds, SynthesisConfig(seed=seed + 1))
    bank = build_prompts(train_ds.categories)
    return DeskCorpus(Path(root), train_ds, val_ds, train_m, val_m, bank, ImageStore(root))


def toy_encoders(bank, cfg: TrainConfig = TRAIN_CONFIG, seed: int = 0) -> ToyEncoderPair:
    return ToyEncoderPair.for_prompts(bank.prompts, resolution=RESOLUTION, dropout=cfg.dropout,
                                      freeze_logit_scale=cfg.freeze_logit_scale, seed=seed)


def train_toy(corpus: DeskCorpus, cfg: TrainConfig = TRAIN_CONFIG, seed: int = 0):
    enc = toy_encoders(corpus.bank, cfg, seed)
    return train(corpus.train_manifest.samples, corpus.bank, enc, cfg, corpus.store, CROP_SPEC,
                 categories=corpus.train_dataset.categories, eval_samples=corpus.val_manifest.samples,
                 checkpoint_meta={"synthesis_config": asdict(corpus.train_manifest.config)})
