from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator


class NoiseKind(str, Enum):
    SYMMETRIC = "sym"
    ASYMMETRIC = "asym"


class SymmetricConvention(str, Enum):
    ALL_CLASSES = "all"
    OTHER_CLASSES = "other"


class GlyphSpec(BaseModel):
    num_classes: int = Field(4, ge=2)
    samples_per_class: int = Field(200, ge=1)
    image_size: int = Field(16, ge=8)
    channels: int = 1
    rotation: float = Field(20.0, ge=0)
    translation: float = Field(2.0, ge=0)
    scale_min: float = Field(0.9, gt=0)
    scale_max: float = Field(1.1, gt=0)
    pixel_noise: float = Field(0.05, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "GlyphSpec":
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        return self

    def without_jitter(self) -> "GlyphSpec":
        return self.model_copy(
            update={
                "rotation": 0.0,
                "translation": 0.0,
                "scale_min": 1.0,
                "scale_max": 1.0,
                "pixel_noise": 0.0,
            }
        )


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_images(cls, images: np.ndarray) -> "NormStats":
        mean = images.mean(axis=(0, 1, 2))
        std = np.maximum(images.std(axis=(0, 1, 2)), 1e-6)
        return cls(mean=mean, std=std)


@dataclass(frozen=True)
class NoisyDataset:
    """Images with given (possibly corrupted) labels and hidden true labels.

    ``images`` is (N, H, W, C) in [0, 1]. ``flip_mask`` is derived from the two
    label arrays and is for diagnostics only.
    """

    images: np.ndarray
    given_labels: np.ndarray
    true_labels: np.ndarray
    num_classes: int
    stats: NormStats
    flip_mask: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        n = self.images.shape[0]
        if self.given_labels.shape != (n,) or self.true_labels.shape != (n,):
            raise ValueError("label arrays must have one entry per image")
        for labels in (self.given_labels, self.true_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValueError(f"label indices must lie in [0, {self.num_classes})")
        object.__setattr__(self, "flip_mask", self.given_labels != self.true_labels)
        for array in (self.images, self.given_labels, self.true_labels, self.flip_mask):
            array.setflags(write=False)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    @property
    def noise_rate(self) -> float:
        return float(self.flip_mask.mean()) if len(self) else 0.0

    def with_given_labels(self, labels: np.ndarray) -> "NoisyDataset":
        return replace(self, given_labels=np.asarray(labels, dtype=np.int64).copy())

    def subset(self, indices: np.ndarray) -> "NoisyDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return NoisyDataset(
            images=self.images[idx].copy(),
            given_labels=self.given_labels[idx].copy(),
            true_labels=self.true_labels[idx].copy(),
            num_classes=self.num_classes,
            stats=self.stats,
        )
