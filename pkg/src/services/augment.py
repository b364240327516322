"""Augmentation op pool, weak/strong policies and AugDesc view generation.

Images are (H, W, C) float arrays in [0, 1]. Every op returns a new array of
the same shape clamped to [0, 1]; normalization by dataset statistics is only
ever the final step of a policy.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageOps
from scipy import ndimage

from src.models.augmentation import (
    AugOp,
    AugStrategy,
    AugVariant,
    OpKind,
    Policy,
    PolicyKind,
    RandAugmentConfig,
)
from src.models.dataset import NoisyDataset, NormStats
from src.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

POOL: Tuple[OpKind, ...] = tuple(OpKind)

_SHARPEN_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


def normalize(img: np.ndarray, stats: Optional[NormStats]) -> np.ndarray:
    if stats is None:
        return img
    return (img - stats.mean) / stats.std


def _signed(value: float, rng: np.random.Generator) -> float:
    return value if rng.random() < 0.5 else -value


def _shift_crop(img: np.ndarray, pad: int, dy: int, dx: int) -> np.ndarray:
    if pad == 0:
        return img.copy()
    h, w = img.shape[:2]
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    return padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w].copy()


def _affine(img: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.affine_transform(
            img[..., ch], matrix, offset=offset, order=0, mode="nearest"
        )
    return out


def _about_center(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    center = (np.array(img.shape[:2], dtype=np.float64) - 1.0) / 2.0
    return _affine(img, matrix, center - matrix @ center)


def _pil_per_channel(img: np.ndarray, fn: Callable[[Image.Image], Image.Image]) -> np.ndarray:
    levels = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = np.empty(img.shape, dtype=np.float64)
    for ch in range(img.shape[2]):
        channel = Image.fromarray(np.ascontiguousarray(levels[..., ch]))
        out[..., ch] = np.asarray(fn(channel), dtype=np.float64) / 255.0
    return out


def _blend(img: np.ndarray, degenerate: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return img.copy()
    return degenerate + factor * (img - degenerate)


def apply_op(img: np.ndarray, op: AugOp, rng: np.random.Generator) -> np.ndarray:
    level = op.magnitude / 10.0
    h, w = img.shape[:2]
    kind = op.kind

    if kind == OpKind.IDENTITY:
        out = img.copy()
    elif kind == OpKind.FLIP_H:
        out = img[:, ::-1].copy()
    elif kind == OpKind.CROP_PAD:
        pad = int(round(level * h / 8.0))
        dy, dx = rng.integers(-pad, pad + 1, size=2)
        out = _shift_crop(img, pad, int(dy), int(dx))
    elif kind == OpKind.ROTATE:
        angle = np.deg2rad(_signed(level * 30.0, rng))
        if angle == 0.0:
            out = img.copy()
        else:
            cos, sin = np.cos(angle), np.sin(angle)
            out = _about_center(img, np.array([[cos, -sin], [sin, cos]]))
    elif kind in (OpKind.SHEAR_X, OpKind.SHEAR_Y):
        shear = _signed(level * 0.3, rng)
        if shear == 0.0:
            out = img.copy()
        elif kind == OpKind.SHEAR_X:
            out = _about_center(img, np.array([[1.0, 0.0], [shear, 1.0]]))
        else:
            out = _about_center(img, np.array([[1.0, shear], [0.0, 1.0]]))
    elif kind in (OpKind.TRANSLATE_X, OpKind.TRANSLATE_Y):
        extent = w if kind == OpKind.TRANSLATE_X else h
        shift = _signed(level * extent / 3.0, rng)
        if shift == 0.0:
            out = img.copy()
        else:
            offset = np.array([0.0, -shift]) if kind == OpKind.TRANSLATE_X else np.array([-shift, 0.0])
            out = _affine(img, np.eye(2), offset)
    elif kind == OpKind.INVERT:
        out = 1.0 - img
    elif kind == OpKind.SOLARIZE:
        # 8-bit semantics: threshold 1.0 touches nothing, 0.0 inverts everything.
        threshold = int(round((1.0 - level) * 256))
        out = np.where(np.round(img * 255.0) >= threshold, 1.0 - img, img)
    elif kind == OpKind.POSTERIZE:
        bits = 8 - int(np.floor(level * 4))
        if bits >= 8:
            out = img.copy()
        else:
            shift = 8 - bits
            levels = np.floor(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
            out = ((levels >> shift) << shift).astype(np.float64) / 255.0
    elif kind == OpKind.CONTRAST:
        out = _blend(img, np.full_like(img, img.mean()), 1.0 + _signed(level * 0.9, rng))
    elif kind == OpKind.BRIGHTNESS:
        out = _blend(img, np.zeros_like(img), 1.0 + _signed(level * 0.9, rng))
    elif kind == OpKind.SHARPNESS:
        factor = 1.0 + _signed(level * 0.9, rng)
        smooth = np.empty_like(img)
        for ch in range(img.shape[2]):
            smooth[..., ch] = ndimage.convolve(img[..., ch], _SHARPEN_KERNEL, mode="nearest")
        out = _blend(img, smooth, factor)
    elif kind == OpKind.AUTOCONTRAST:
        out = _pil_per_channel(img, ImageOps.autocontrast)
    elif kind == OpKind.EQUALIZE:
        out = _pil_per_channel(img, ImageOps.equalize)
    else:  # pragma: no cover
        raise ConfigurationError(f"unknown augmentation op {kind}")
    return np.clip(out, 0.0, 1.0)


def weak_prefix(img: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Reflect-pad, random crop back to size, horizontal flip with p=0.5."""
    dy, dx = rng.integers(-pad, pad + 1, size=2)
    out = _shift_crop(img, pad, int(dy), int(dx))
    if rng.random() < 0.5:
        out = out[:, ::-1].copy()
    return out


def weak(
    img: np.ndarray,
    rng: np.random.Generator,
    stats: Optional[NormStats] = None,
    pad: int = 2,
) -> np.ndarray:
    return normalize(weak_prefix(img, rng, pad), stats)


def strong(
    img: np.ndarray,
    rng: np.random.Generator,
    cfg: RandAugmentConfig,
    stats: Optional[NormStats] = None,
    pad: int = 2,
    pool: Sequence[OpKind] = POOL,
    applied: Optional[List[AugOp]] = None,
) -> np.ndarray:
    """Weak crop/flip prefix, then N uniformly drawn pool ops at magnitude M."""
    out = weak_prefix(img, rng, pad)
    for _ in range(cfg.N):
        op = AugOp(pool[int(rng.integers(len(pool)))], cfg.M)
        out = apply_op(out, op, rng)
        if applied is not None:
            applied.append(op)
    return normalize(out, stats)


def apply_policy(
    img: np.ndarray,
    policy: Policy,
    rng: np.random.Generator,
    stats: Optional[NormStats] = None,
) -> np.ndarray:
    if policy.kind == PolicyKind.RAW:
        return normalize(img.copy(), stats)
    if policy.kind == PolicyKind.WEAK:
        return weak(img, rng, stats, policy.pad)
    return strong(img, rng, policy.randaugment, stats, policy.pad)


def parse_policy(text: str, pad: int = 2) -> Policy:
    """Parse CLI policy descriptors: ``raw``, ``weak``, ``strong`` or ``strong:N=1,M=6``."""
    name, _, params = text.strip().partition(":")
    try:
        kind = PolicyKind(name.lower())
    except ValueError:
        raise ConfigurationError(f"unknown augmentation policy '{text}'") from None
    values = {}
    if params:
        if kind != PolicyKind.STRONG:
            raise ConfigurationError(f"policy '{name}' takes no parameters")
        for item in params.split(","):
            key, sep, value = item.partition("=")
            if not sep or key.strip() not in ("N", "M"):
                raise ConfigurationError(f"bad policy parameter '{item}' in '{text}'")
            values[key.strip()] = float(value) if key.strip() == "M" else int(value)
    return Policy(kind=kind, randaugment=RandAugmentConfig(**values), pad=pad)


def expand(dataset: NoisyDataset, policy: Policy, seed: int) -> NoisyDataset:
    """Original samples followed by one fixed augmented copy of each."""
    copies = np.empty_like(dataset.images)
    for i in range(len(dataset)):
        copies[i] = apply_policy(dataset.images[i], policy, np.random.default_rng([seed, i]))
    logger.info("expanded dataset %d -> %d with %s", len(dataset), 2 * len(dataset), policy.describe())
    return NoisyDataset(
        images=np.concatenate([dataset.images, copies], axis=0),
        given_labels=np.concatenate([dataset.given_labels, dataset.given_labels]),
        true_labels=np.concatenate([dataset.true_labels, dataset.true_labels]),
        num_classes=dataset.num_classes,
        stats=dataset.stats,
    )


def _policy_for(kind: PolicyKind, randaugment: RandAugmentConfig, pad: int) -> Policy:
    return Policy(kind=kind, randaugment=randaugment, pad=pad)


def split_streams(rng: np.random.Generator) -> Tuple[np.random.Generator, np.random.Generator]:
    seeds = rng.integers(0, 2**63 - 1, size=2)
    return np.random.default_rng(int(seeds[0])), np.random.default_rng(int(seeds[1]))


def augdesc_views(
    img: np.ndarray,
    strategy: AugStrategy,
    analysis_rng: np.random.Generator,
    descent_rng: np.random.Generator,
    stats: Optional[NormStats],
    randaugment: RandAugmentConfig,
    pad: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    analysis = apply_policy(
        img, _policy_for(strategy.analysis_policy, randaugment, pad), analysis_rng, stats
    )
    descent = apply_policy(
        img, _policy_for(strategy.descent_policy, randaugment, pad), descent_rng, stats
    )
    return analysis, descent


def strategy_views(
    img: np.ndarray,
    strategy: AugStrategy,
    rng: np.random.Generator,
    stats: Optional[NormStats] = None,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """(analysis view, descent view) for one image under a strategy."""
    randaugment = randaugment or RandAugmentConfig()
    variant = strategy.variant
    if variant in (AugVariant.RAW, AugVariant.EXPANSION_W, AugVariant.EXPANSION_S):
        view = normalize(img.copy(), stats)
        return view, view
    if variant in (AugVariant.RUNTIME_W, AugVariant.RUNTIME_S):
        view = apply_policy(
            img, _policy_for(strategy.analysis_policy, randaugment, pad), rng, stats
        )
        return view, view
    analysis_rng, descent_rng = split_streams(rng)
    return augdesc_views(img, strategy, analysis_rng, descent_rng, stats, randaugment, pad)


def sample_rng(seed: int, epoch: int, salt: int, index: int, view: int = 0) -> np.random.Generator:
    """Per-sample generator; results do not depend on processing order."""
    return np.random.default_rng([seed, epoch, salt, view, int(index)])


def render_views(
    dataset: NoisyDataset,
    indices: np.ndarray,
    strategy: AugStrategy,
    views: int,
    seed: int,
    epoch: int,
    salt: int,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stacks of shape (views, B, H, W, C) for analysis and descent roles."""
    shape = (views, len(indices)) + dataset.image_shape
    analysis = np.empty(shape)
    descent = np.empty(shape)
    for m in range(views):
        for b, idx in enumerate(indices):
            a, d = strategy_views(
                dataset.images[idx],
                strategy,
                sample_rng(seed, epoch, salt, idx, m),
                dataset.stats,
                randaugment,
                pad,
            )
            analysis[m, b] = a
            descent[m, b] = d
    return analysis, descent


def render_policy(
    dataset: NoisyDataset,
    indices: np.ndarray,
    kind: PolicyKind,
    seed: int,
    epoch: int,
    salt: int,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> np.ndarray:
    policy = _policy_for(kind, randaugment or RandAugmentConfig(), pad)
    out = np.empty((len(indices),) + dataset.image_shape)
    for b, idx in enumerate(indices):
        out[b] = apply_policy(dataset.images[idx], policy, sample_rng(seed, epoch, salt, idx), dataset.stats)
    return out


def plain_images(dataset: NoisyDataset, indices: Optional[np.ndarray] = None) -> np.ndarray:
    images = dataset.images if indices is None else dataset.images[indices]
    return normalize(images, dataset.stats)
