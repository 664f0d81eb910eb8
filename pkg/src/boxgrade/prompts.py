"""The 2n+1 prompt bank and its (class, quality) <-> index map."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import CategorySet
from .synthesis import BACKGROUND, BAD, GOOD

TEMPLATES = {
    "simple": {
        GOOD: "The magenta bounding box is a good bounding box of {name}.",
        BAD: "The magenta bounding box is a bad bounding box of {name}.",
        BACKGROUND: "The magenta bounding box is a good bounding box of background.",
    },
    "elaborate": {
        GOOD: "The magenta bounding box is a precise bounding box that tightly encloses the entire {name}.",
        BAD: "The magenta bounding box is an inaccurate bounding box that is too large, too small or shifted for {name}.",
        BACKGROUND: "The magenta bounding box encloses only background and no labelled object.",
    },
}


@dataclass(frozen=True)
class PromptBank:
    prompts: tuple[str, ...]
    class_names: tuple[str, ...]
    template_set: str = "simple"

    @property
    def n(self) -> int:
        return len(self.class_names)

    @property
    def background_index(self) -> int:
        return 2 * self.n

    def __len__(self) -> int:
        return len(self.prompts)

    def index_of(self, class_id: int, quality: str) -> int:
        if quality == BACKGROUND:
            return self.background_index
        if not 0 <= class_id < self.n:
            raise KeyError(f"unknown class {class_id}")
        if quality == GOOD:
            return 2 * class_id
        if quality == BAD:
            return 2 * class_id + 1
        raise KeyError(f"unknown quality {quality!r}")

    def class_of(self, index: int) -> tuple[int | None, str]:
        """Inverse of :meth:`index_of`; background maps to ``(None, "background")``."""
        if index == self.background_index:
            return None, BACKGROUND
        if not 0 <= index < self.background_index:
            raise KeyError(f"prompt index {index} out of range")
        return index // 2, GOOD if index % 2 == 0 else BAD

    def good_index(self, class_id: int) -> int:
        return self.index_of(class_id, GOOD)

    def to_json(self) -> dict:
        return {"prompts": list(self.prompts), "class_names": list(self.class_names),
                "template_set": self.template_set}

    @classmethod
    def from_json(cls, d: dict) -> "PromptBank":
        bank = cls(tuple(d["prompts"]), tuple(d["class_names"]), d.get("template_set", "simple"))
        if len(bank.prompts) != 2 * bank.n + 1:
            raise ValueError("prompt bank length must be 2n+1")
        return bank

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PromptBank":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_prompts(categories: CategorySet | list[str], template_set: str = "simple") -> PromptBank:
    names = categories.names if isinstance(categories, CategorySet) else list(categories)
    if not names:
        raise ValueError("need at least one class")
    if template_set not in TEMPLATES:
        raise ValueError(f"unknown template set {template_set!r}")
    names = [n.lower() for n in names]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate class names would collide: {dupes}")
    tpl = TEMPLATES[template_set]
    prompts = []
    for name in names:
        prompts.append(tpl[GOOD].format(name=name))
        prompts.append(tpl[BAD].format(name=name))
    prompts.append(tpl[BACKGROUND])
    return PromptBank(tuple(prompts), tuple(names), template_set)


def target_index(sample, bank: PromptBank) -> int:
    return bank.index_of(sample.class_id, sample.quality)
