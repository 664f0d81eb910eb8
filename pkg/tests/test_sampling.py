from collections import Counter

import numpy as np
import pytest

from boxgrade.grader.sampling import TripletSampler, sample_batch
from boxgrade.prompts import build_prompts
from boxgrade.synthesis import BACKGROUND, BAD, GOOD, BoxSample

BANK = build_prompts(["a", "b"])


def triplets(n_images, drop=()):
    out = []
    for i in range(n_images):
        for q, cls in ((GOOD, i % 2), (BAD, i % 2), (BACKGROUND, 2)):
            if (i, q) not in drop:
                out.append(BoxSample(f"{i}-{q}-0", i, f"{i}.png", (0, 0, 10, 10), cls, q, None, 0))
    return out


def test_exact_fit():
    batch = sample_batch(triplets(10), BANK, 30, 0)
    assert batch.size == 30 and not batch.short
    assert Counter(s.quality for s in batch.samples) == {GOOD: 10, BAD: 10, BACKGROUND: 10}
    assert batch.prompt_indices == [BANK.index_of(s.class_id, s.quality) for s in batch.samples]


def test_missing_tier_contributes_what_it_has():
    batch = sample_batch(triplets(2, drop={(0, BACKGROUND)}), BANK, 10, 0)
    assert batch.size == 5 and batch.short
    per_image = Counter(s.image_id for s in batch.samples)
    assert per_image == {0: 2, 1: 3}


def test_tier_proportions():
    sampler = iter(TripletSampler(triplets(50), BANK, 32, seed=1))
    counts = Counter()
    for _ in range(100):
        counts.update(s.quality for s in next(sampler).samples)
    total = sum(counts.values())
    for q in (GOOD, BAD, BACKGROUND):
        assert abs(counts[q] / total - 1 / 3) <= 0.05


def test_one_sample_per_tier_per_image():
    samples = triplets(6) + [BoxSample("0-good-1", 0, "0.png", (1, 1, 5, 5), 0, GOOD, None, 0)]
    for batch in TripletSampler(samples, BANK, 3, seed=0).epoch():
        keys = Counter((s.image_id, s.quality) for s in batch.samples)
        assert max(keys.values()) == 1


def test_deterministic():
    a = [b.samples for b in TripletSampler(triplets(20), BANK, 16, seed=3).epoch()]
    b = [b.samples for b in TripletSampler(triplets(20), BANK, 16, seed=3).epoch()]
    assert a == b
    assert sample_batch(triplets(20), BANK, 8, np.random.default_rng(5)).samples == \
        sample_batch(triplets(20), BANK, 8, np.random.default_rng(5)).samples


def test_epoch_visits_every_image():
    seen = {s.image_id for b in TripletSampler(triplets(25), BANK, 12, seed=0).epoch() for s in b.samples}
    assert seen == set(range(25))


@pytest.mark.parametrize("samples, size", [([], 8), (triplets(3), 1), (triplets(1)[:1], 8)])
def test_invalid(samples, size):
    with pytest.raises(ValueError):
        TripletSampler(samples, BANK, size)
