"""Multi-positive image/text contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch


def match_matrix(prompt_indices) -> torch.Tensor:
    """0/1 matrix with ``M[i, j] = 1`` iff samples i and j share a prompt."""
    idx = torch.as_tensor(prompt_indices)
    return (idx[:, None] == idx[None, :]).to(torch.float64)


def build_target_matrix(prompt_indices, dtype=torch.float64) -> torch.Tensor:
    """Row-normalized match matrix; each row is a distribution over correct columns."""
    if len(prompt_indices) < 2:
        raise ValueError("a batch needs at least two samples")
    m = match_matrix(prompt_indices)
    return (m / m.sum(dim=1, keepdim=True)).to(dtype)


@dataclass
class LossOutput:
    loss_image: torch.Tensor
    loss_text: torch.Tensor
    loss_total: torch.Tensor

    def item(self) -> dict:
        return {"loss_image": self.loss_image.item(), "loss_text": self.loss_text.item(),
                "loss_total": self.loss_total.item()}


def _soft_ce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    # log_softmax subtracts the row max internally
    return -(target * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()


def _pooled_nll(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    # -log of the total softmax mass on the correct entries
    logp = torch.log_softmax(logits, dim=1)
    mask = target > 0
    pos = torch.logsumexp(logp.masked_fill(~mask, float("-inf")), dim=1)
    return -pos.mean()


def contrastive_loss(image_emb: torch.Tensor, text_emb: torch.Tensor, target: torch.Tensor,
                     logit_scale, reduction: str = "target_ce") -> LossOutput:
    """Symmetric contrastive loss against a multi-positive target matrix.

    ``reduction="target_ce"`` is the cross-entropy between each row's
    softmax and the normalized target row. ``"pooled"`` instead takes
    ``-log`` of the summed probability of all correct entries.
    """
    if not (torch.isfinite(image_emb).all() and torch.isfinite(text_emb).all()):
        raise FloatingPointError("non-finite embeddings")
    if image_emb.shape != text_emb.shape:
        raise ValueError(f"embedding shapes differ: {tuple(image_emb.shape)} vs {tuple(text_emb.shape)}")
    target = target.to(image_emb.dtype)
    logits = logit_scale * image_emb @ text_emb.T
    fn = {"target_ce": _soft_ce, "pooled": _pooled_nll}[reduction]
    loss_image = fn(logits, target)
    loss_text = fn(logits.T, target.T)
    return LossOutput(loss_image, loss_text, (loss_image + loss_text) / 2)
