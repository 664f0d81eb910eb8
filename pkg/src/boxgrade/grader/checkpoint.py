"""Self-describing checkpoint container."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..dataset import CategorySet
from ..prompts import PromptBank
from .encoders import EncoderPair, build_encoders

CHECKPOINT_FORMAT = "boxgrade.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    encoder_kind: str
    encoder_config: dict
    state_dict: dict
    bank: PromptBank
    categories: CategorySet
    train_config: dict = field(default_factory=dict)
    synthesis_config: dict = field(default_factory=dict)
    crop_spec: dict = field(default_factory=dict)
    run_config: dict = field(default_factory=dict)
    step: int = 0
    format_version: int = CHECKPOINT_VERSION

    @classmethod
    def capture(cls, encoders: EncoderPair, bank, categories, **kw) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in encoders.state_dict().items()}
        return cls(encoders.kind, encoders.config(), state, bank, categories, **kw)

    @property
    def logit_scale(self) -> float:
        return float(self.state_dict["log_logit_scale"].exp())

    def build_encoders(self) -> EncoderPair:
        enc = build_encoders(self.encoder_kind, self.encoder_config)
        enc.load_state_dict(self.state_dict)
        enc.eval()
        return enc

    def save(self, path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "format_version": self.format_version,
            "encoder_kind": self.encoder_kind,
            "encoder_config": self.encoder_config,
            "state_dict": self.state_dict,
            "prompt_bank": self.bank.to_json(),
            "categories": self.categories.to_json(),
            "train_config": self.train_config,
            "synthesis_config": self.synthesis_config,
            "crop_spec": self.crop_spec,
            "run_config": self.run_config,
            "step": self.step,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such checkpoint: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a boxgrade checkpoint")
        if payload["format_version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint format {payload['format_version']} is newer than supported")
        return cls(
            encoder_kind=payload["encoder_kind"],
            encoder_config=payload["encoder_config"],
            state_dict=payload["state_dict"],
            bank=PromptBank.from_json(payload["prompt_bank"]),
            categories=CategorySet.from_json(payload["categories"]),
            train_config=payload["train_config"],
            synthesis_config=payload["synthesis_config"],
            crop_spec=payload["crop_spec"],
            run_config=payload["run_config"],
            step=payload["step"],
            format_version=payload["format_version"],
        )
