"""Per-image good/bad/background batch sampling."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..synthesis import QUALITIES, BoxSample


@dataclass
class Batch:
    samples: list[BoxSample]
    prompt_indices: list[int]
    short: bool = False  # fewer samples than requested

    @property
    def size(self) -> int:
        return len(self.samples)


def group_by_image(samples) -> dict[int, dict[str, list[BoxSample]]]:
    groups: dict[int, dict[str, list[BoxSample]]] = defaultdict(lambda: defaultdict(list))
    for s in samples:
        groups[s.image_id][s.quality].append(s)
    return groups


class TripletSampler:
    """Yields batches built from one good, one bad and one background sample per image.

    Images are visited in a fresh random order every epoch; images missing
    a tier contribute what they have. The last batch of an epoch may be
    short.
    """

    def __init__(self, samples, bank, batch_size: int, seed: int = 0):
        if not samples:
            raise ValueError("cannot sample batches from an empty manifest")
        if batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        self.groups = group_by_image(samples)
        self.image_ids = sorted(self.groups)
        self.bank = bank
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        if sum(len(t) for t in self.groups.values()) < 2:
            raise ValueError("need samples from at least two tiers or images to form a batch")

    def _triplet(self, image_id) -> list[BoxSample]:
        tiers = self.groups[image_id]
        out = []
        for q in QUALITIES:
            pool = tiers.get(q)
            if pool:
                out.append(pool[int(self.rng.integers(len(pool)))])
        return out

    def _batch(self, samples) -> Batch:
        idx = [self.bank.index_of(s.class_id, s.quality) for s in samples]
        return Batch(samples, idx, short=len(samples) < self.batch_size)

    def epoch(self):
        pending: list[BoxSample] = []
        for i in self.rng.permutation(len(self.image_ids)):
            pending.extend(self._triplet(self.image_ids[i]))
            while len(pending) >= self.batch_size:
                yield self._batch(pending[: self.batch_size])
                pending = pending[self.batch_size:]
        if len(pending) >= 2:
            yield self._batch(pending)

    def __iter__(self):
        while True:
            yield from self.epoch()

    def batches_per_epoch(self) -> int:
        total = sum(min(1, len(t.get(q, ()))) for t in self.groups.values() for q in QUALITIES)
        return max(1, -(-total // self.batch_size))


def sample_batch(samples, bank, batch_size: int, rng) -> Batch:
    """Draw a single batch; ``rng`` is a seed or a numpy Generator."""
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(2**63))
    return next(TripletSampler(samples, bank, batch_size, seed).epoch())
