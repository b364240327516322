import logging
import struct
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from src.models.dataset import GlyphSpec, NoisyDataset, NormStats, SymmetricConvention
from src.utils.errors import ConfigurationError, FormatError, HarnessIOError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_COLOR_IMAGES_MAGIC = 0x00000804
IDX_LABELS_MAGIC = 0x00000801

# Glyph templates take normalized coordinates (u right, v down, roughly [-1, 1])
# and return the foreground mask. None of them is the mirror image of another,
# so horizontal flips never turn one class into a different one.


def _inside(u: np.ndarray, v: np.ndarray, extent: float = 0.8) -> np.ndarray:
    return (np.abs(u) < extent) & (np.abs(v) < extent)


def _ring(u, v):
    r = np.hypot(u, v)
    return (r > 0.45) & (r < 0.78)


def _plus(u, v):
    return ((np.abs(u) < 0.18) | (np.abs(v) < 0.18)) & _inside(u, v)


def _bar_h(u, v):
    return (np.abs(v) < 0.22) & (np.abs(u) < 0.8)


def _triangle(u, v):
    return (v < 0.6) & (v > -0.7) & (np.abs(u) < (v + 0.7) * 0.62)


def _checker(u, v):
    cells = np.floor((u + 0.8) / 0.4) + np.floor((v + 0.8) / 0.4)
    return _inside(u, v) & (cells % 2 == 0)


def _bar_v(u, v):
    return (np.abs(u) < 0.22) & (np.abs(v) < 0.8)


def _cross(u, v):
    return ((np.abs(u - v) < 0.25) | (np.abs(u + v) < 0.25)) & _inside(u, v, 0.75)


def _square(u, v):
    edge = np.maximum(np.abs(u), np.abs(v))
    return (edge > 0.45) & (edge < 0.75)


def _stripes_h(u, v):
    return _inside(u, v) & (np.floor((v + 0.8) / 0.32) % 2 == 0)


def _disk(u, v):
    return np.hypot(u, v) < 0.55


def _diagonal(u, v):
    return (np.abs(u + v) < 0.28) & _inside(u, v)


def _dots(u, v):
    return (np.hypot(u - 0.45, v) < 0.25) | (np.hypot(u + 0.45, v) < 0.25)


def _target(u, v):
    r = np.hypot(u, v)
    return (r < 0.2) | ((r > 0.55) & (r < 0.78))


def _chevron(u, v):
    return (np.abs(v + 0.3 - 0.8 * np.abs(u)) < 0.2) & (np.abs(u) < 0.75)


def _stripes_v(u, v):
    return _inside(u, v) & (np.floor((u + 0.8) / 0.32) % 2 == 0)


def _corner(u, v):
    upright = (np.abs(u + 0.45) < 0.2) & (np.abs(v) < 0.75)
    base = (np.abs(v - 0.55) < 0.2) & (u > -0.65) & (u < 0.7)
    return upright | base


GLYPH_TEMPLATES: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "ring": _ring,
    "plus": _plus,
    "bar_h": _bar_h,
    "triangle": _triangle,
    "checker": _checker,
    "bar_v": _bar_v,
    "cross": _cross,
    "square": _square,
    "stripes_h": _stripes_h,
    "disk": _disk,
    "diagonal": _diagonal,
    "dots": _dots,
    "target": _target,
    "chevron": _chevron,
    "stripes_v": _stripes_v,
    "corner": _corner,
}

_SUPERSAMPLE = 2


def _render(
    template: Callable[[np.ndarray, np.ndarray], np.ndarray],
    size: int,
    angle_deg: float,
    scale: float,
    shift_x: float,
    shift_y: float,
) -> np.ndarray:
    offsets = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE - 0.5
    coords = (np.arange(size)[:, None] + offsets[None, :]).reshape(-1)
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    center = (size - 1) / 2.0
    dx = xs - center - shift_x
    dy = ys - center - shift_y
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    radius = scale * size / 2.0
    u = (cos * dx + sin * dy) / radius
    v = (-sin * dx + cos * dy) / radius
    mask = template(u, v).astype(np.float64)
    return mask.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))


def generate_glyphs(spec: GlyphSpec, seed: int) -> NoisyDataset:
    """Render a balanced, clean procedural-shape dataset."""
    if spec.num_classes > len(GLYPH_TEMPLATES):
        raise ConfigurationError(
            f"{spec.num_classes} classes requested but only {len(GLYPH_TEMPLATES)} glyph templates exist"
        )
    if spec.image_size < 16:
        raise ConfigurationError(f"glyph images must be at least 16 pixels, got {spec.image_size}")

    rng = np.random.default_rng(seed)
    templates = list(GLYPH_TEMPLATES.values())[: spec.num_classes]
    n = spec.num_classes * spec.samples_per_class
    size = spec.image_size
    images = np.empty((n, size, size, spec.channels))
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)

    for i, label in enumerate(labels):
        angle = rng.uniform(-spec.rotation, spec.rotation)
        scale = rng.uniform(spec.scale_min, spec.scale_max)
        shift_x, shift_y = rng.uniform(-spec.translation, spec.translation, size=2)
        glyph = _render(templates[label], size, angle, scale, shift_x, shift_y)
        if spec.channels == 3:
            color = rng.uniform(0.5, 1.0, size=3)
            image = glyph[:, :, None] * color[None, None, :]
        else:
            image = glyph[:, :, None]
        image = image + rng.normal(0.0, spec.pixel_noise, size=image.shape)
        images[i] = np.clip(image, 0.0, 1.0)

    order = rng.permutation(n)
    images, labels = images[order], labels[order]
    logger.info("generated %d glyph images, %d classes, seed %d", n, spec.num_classes, seed)
    return NoisyDataset(
        images=images,
        given_labels=labels.copy(),
        true_labels=labels.copy(),
        num_classes=spec.num_classes,
        stats=NormStats.from_images(images),
    )


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise HarnessIOError(path, e) from e


def _parse_images(data: bytes, path: Path) -> np.ndarray:
    if len(data) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_COLOR_IMAGES_MAGIC):
        raise FormatError(f"{path}: bad image magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims))
    if len(data) - header < expected:
        raise FormatError(f"{path}: truncated pixel data ({len(data) - header} of {expected} bytes)")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header).reshape(dims)
    if ndim == 3:
        pixels = pixels[..., None]
    return pixels.astype(np.float64) / 255.0


def _parse_labels(data: bytes, path: Path) -> np.ndarray:
    if len(data) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: bad label magic 0x{magic:08x}")
    if len(data) - 8 < count:
        raise FormatError(f"{path}: truncated label data ({len(data) - 8} of {count} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    num_classes: Optional[int] = None,
) -> NoisyDataset:
    images = _parse_images(_read_bytes(Path(images_path)), Path(images_path))
    labels = _parse_labels(_read_bytes(Path(labels_path)), Path(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    classes = num_classes if num_classes is not None else int(labels.max()) + 1 if labels.size else 1
    if labels.size and labels.max() >= classes:
        raise FormatError(f"label {labels.max()} out of range for {classes} classes")
    return NoisyDataset(
        images=images,
        given_labels=labels.copy(),
        true_labels=labels.copy(),
        num_classes=classes,
        stats=NormStats.from_images(images),
    )


def write_idx(
    dataset: NoisyDataset, images_path: Union[str, Path], labels_path: Union[str, Path]
) -> None:
    """Write images (8-bit) and given labels in IDX format."""
    n, height, width, channels = dataset.images.shape
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    if channels == 1:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, height, width)
        body = pixels[..., 0].tobytes()
    else:
        header = struct.pack(">IIIII", IDX_COLOR_IMAGES_MAGIC, n, height, width, channels)
        body = pixels.tobytes()
    label_bytes = struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.given_labels.astype(np.uint8).tobytes()
    for path, payload in ((Path(images_path), header + body), (Path(labels_path), label_bytes)):
        try:
            path.write_bytes(payload)
        except OSError as e:
            raise HarnessIOError(path, e) from e


def inject_symmetric(
    dataset: NoisyDataset,
    rate: float,
    seed: int,
    convention: SymmetricConvention = SymmetricConvention.ALL_CLASSES,
) -> NoisyDataset:
    """Relabel each sample with probability ``rate``.

    Under the default convention the new label is uniform over all classes, so
    the expected unchanged fraction is 1 - r + r/C.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"noise rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    n, classes = len(dataset), dataset.num_classes
    selected = rng.random(n) < rate
    if convention == SymmetricConvention.OTHER_CLASSES:
        new = (dataset.given_labels + rng.integers(1, classes, size=n)) % classes
    else:
        new = rng.integers(0, classes, size=n)
    noisy = dataset.with_given_labels(np.where(selected, new, dataset.given_labels))
    logger.info("symmetric noise r=%.2f: %.3f of labels flipped", rate, noisy.noise_rate)
    return noisy


def _class_map_array(
    class_map: Union[None, Sequence[int], Callable[[int], int]], classes: int
) -> np.ndarray:
    if class_map is None:
        mapping = [(i + 1) % classes for i in range(classes)]
    elif callable(class_map):
        mapping = [class_map(i) for i in range(classes)]
    else:
        mapping = list(class_map)
    if len(mapping) != classes:
        raise ConfigurationError(f"class map has {len(mapping)} entries for {classes} classes")
    array = np.asarray(mapping, dtype=np.int64)
    if array.min() < 0 or array.max() >= classes:
        raise ConfigurationError(f"class map targets must lie in [0, {classes})")
    return array


def inject_asymmetric(
    dataset: NoisyDataset,
    rate: float,
    seed: int,
    class_map: Union[None, Sequence[int], Callable[[int], int]] = None,
) -> NoisyDataset:
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"noise rate must lie in [0, 1], got {rate}")
    mapping = _class_map_array(class_map, dataset.num_classes)
    rng = np.random.default_rng(seed)
    selected = rng.random(len(dataset)) < rate
    noisy = dataset.with_given_labels(
        np.where(selected, mapping[dataset.true_labels], dataset.given_labels)
    )
    logger.info("asymmetric noise r=%.2f: %.3f of labels flipped", rate, noisy.noise_rate)
    return noisy


def batches(
    source: Union[NoisyDataset, int, np.ndarray],
    batch_size: int,
    epoch: int,
    seed: int,
) -> List[np.ndarray]:
    """Deterministic (seed, epoch) shuffle chunked into batches; last partial batch kept.

    ``source`` is a dataset, a sample count, or an explicit index array to shuffle.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be at least 1, got {batch_size}")
    if isinstance(source, NoisyDataset):
        indices = np.arange(len(source))
    elif isinstance(source, (int, np.integer)):
        indices = np.arange(int(source))
    else:
        indices = np.asarray(source, dtype=np.int64)
    rng = np.random.default_rng([seed, epoch])
    order = indices[rng.permutation(indices.size)]
    return [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
