from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class GmmFit2:
    """Two-component 1D Gaussian mixture; component 0 has the lower mean."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    log_likelihoods: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class BmmFit2:
    """Two-component beta mixture; ``alphas[k]``, ``betas[k]`` per component."""

    alphas: np.ndarray
    betas: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    log_likelihoods: List[float] = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return self.alphas / (self.alphas + self.betas)


@dataclass(frozen=True)
class SplitResult:
    labeled: np.ndarray
    labeled_w: np.ndarray
    unlabeled: np.ndarray
    fallback_used: bool = False

    @property
    def size(self) -> int:
        return int(self.labeled.size + self.unlabeled.size)


@dataclass(frozen=True)
class HistogramBin:
    bin_left: float
    clean_count: int
    noisy_count: int
