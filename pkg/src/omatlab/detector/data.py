from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import mix64


@dataclass
class LabeledSet:
    """Images with 0 (real) / 1 (fake) labels and a provenance tag per item.

    Provenance is ``"real"``, ``"fake:<generator_id>"`` or ``"adv"``.
    """

    images: np.ndarray
    labels: np.ndarray
    provenance: list[str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.images) == len(self.labels) == len(self.provenance)):
            raise ValueError("images, labels and provenance must have equal length")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be 0 or 1")
        for y, p in zip(self.labels, self.provenance):
            if (p == "real") != (y == 0):
                raise ValueError(f"provenance {p!r} inconsistent with label {y}")
            if p != "real" and p != "adv" and not p.startswith("fake:"):
                raise ValueError(f"unknown provenance {p!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def real(cls, images: np.ndarray) -> "LabeledSet":
        return cls(images, np.zeros(len(images), dtype=np.int64), ["real"] * len(images))

    @classmethod
    def fake(cls, images: np.ndarray, generator_id: str) -> "LabeledSet":
        return cls(images, np.ones(len(images), dtype=np.int64), [f"fake:{generator_id}"] * len(images))

    @classmethod
    def adversarial(cls, images: np.ndarray) -> "LabeledSet":
        return cls(images, np.ones(len(images), dtype=np.int64), ["adv"] * len(images))

    @classmethod
    def empty(cls, image_shape=(1, 8, 8)) -> "LabeledSet":
        return cls(np.zeros((0, *image_shape)), np.zeros(0, dtype=np.int64), [])

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.images[idx], self.labels[idx], [self.provenance[i] for i in idx])

    def concat(self, other: "LabeledSet") -> "LabeledSet":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return LabeledSet(
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            self.provenance + other.provenance,
        )


def split_train_val(data: LabeledSet, salt: int = 0) -> tuple[LabeledSet, LabeledSet]:
    """Deterministic ~90/10 split: item i is validation iff ``mix64(i ^ salt) % 10 == 0``."""
    val = np.array([mix64(i ^ salt) % 10 == 0 for i in range(len(data))], dtype=bool)
    return data.subset(np.flatnonzero(~val)), data.subset(np.flatnonzero(val))
