import numpy as np
import pytest

from src.models.dataset import GlyphSpec, NoisyDataset, NormStats, SymmetricConvention
from src.services.data import (
    batches,
    generate_glyphs,
    inject_asymmetric,
    inject_symmetric,
    load_idx,
    write_idx,
)
from src.utils.errors import ConfigurationError, FormatError


def _label_only_dataset(n: int, classes: int, seed: int = 0) -> NoisyDataset:
    labels = np.random.default_rng(seed).integers(0, classes, size=n)
    images = np.zeros((n, 1, 1, 1))
    return NoisyDataset(
        images=images,
        given_labels=labels.copy(),
        true_labels=labels.copy(),
        num_classes=classes,
        stats=NormStats.from_images(images),
    )


def test_glyphs_are_balanced_and_in_range(glyphs: NoisyDataset) -> None:
    assert glyphs.images.shape == (40, 16, 16, 1)
    assert glyphs.images.min() >= 0.0 and glyphs.images.max() <= 1.0
    assert np.bincount(glyphs.true_labels).tolist() == [10, 10, 10, 10]
    assert glyphs.noise_rate == 0.0


def test_glyphs_are_deterministic_per_seed() -> None:
    spec = GlyphSpec(num_classes=3, samples_per_class=4)
    a, b = generate_glyphs(spec, 7), generate_glyphs(spec, 7)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.true_labels, b.true_labels)
    assert not np.array_equal(a.images, generate_glyphs(spec, 8).images)


def test_glyphs_without_jitter_repeat_within_a_class() -> None:
    data = generate_glyphs(GlyphSpec(num_classes=3, samples_per_class=5).without_jitter(), 1)
    for label in range(3):
        members = data.images[data.true_labels == label]
        for image in members[1:]:
            np.testing.assert_array_equal(image, members[0])
    assert not np.array_equal(
        data.images[data.true_labels == 0][0], data.images[data.true_labels == 1][0]
    )


def test_color_glyphs_have_three_channels() -> None:
    data = generate_glyphs(GlyphSpec(num_classes=2, samples_per_class=3, channels=3), 2)
    assert data.images.shape[-1] == 3
    assert data.stats.mean.shape == (3,)


def test_glyph_limits() -> None:
    with pytest.raises(ConfigurationError):
        generate_glyphs(GlyphSpec(num_classes=17, samples_per_class=1), 0)
    with pytest.raises(ConfigurationError):
        generate_glyphs(GlyphSpec(num_classes=2, samples_per_class=1, image_size=12), 0)


def test_symmetric_noise_unchanged_fraction() -> None:
    data = _label_only_dataset(10_000, 10)
    noisy = inject_symmetric(data, 0.9, seed=11)
    unchanged = float(np.mean(noisy.given_labels == data.true_labels))
    assert abs(unchanged - 0.19) <= 0.012
    np.testing.assert_array_equal(noisy.true_labels, data.true_labels)


def test_symmetric_noise_other_classes_convention() -> None:
    data = _label_only_dataset(5_000, 4)
    noisy = inject_symmetric(data, 0.4, seed=3, convention=SymmetricConvention.OTHER_CLASSES)
    assert abs(noisy.noise_rate - 0.4) < 0.03


def test_noise_is_reproducible_and_rate_zero_is_identity() -> None:
    data = _label_only_dataset(500, 5)
    a, b = inject_symmetric(data, 0.5, seed=4), inject_symmetric(data, 0.5, seed=4)
    np.testing.assert_array_equal(a.given_labels, b.given_labels)
    np.testing.assert_array_equal(inject_symmetric(data, 0.0, seed=4).given_labels, data.given_labels)
    with pytest.raises(ConfigurationError):
        inject_symmetric(data, 1.5, seed=4)


def test_asymmetric_noise_follows_class_map() -> None:
    data = _label_only_dataset(4_000, 4)
    noisy = inject_asymmetric(data, 0.3, seed=9)
    flipped = noisy.flip_mask
    np.testing.assert_array_equal(
        noisy.given_labels[flipped], (data.true_labels[flipped] + 1) % 4
    )
    assert abs(flipped.mean() - 0.3) < 0.03

    custom = inject_asymmetric(data, 1.0, seed=9, class_map=lambda c: 0)
    assert set(custom.given_labels.tolist()) == {0}
    with pytest.raises(ConfigurationError):
        inject_asymmetric(data, 0.3, seed=9, class_map=[0, 1])


def test_idx_round_trip(glyphs: NoisyDataset, tmp_path) -> None:
    images, labels = tmp_path / "images.idx", tmp_path / "labels.idx"
    write_idx(glyphs, images, labels)
    loaded = load_idx(images, labels, num_classes=4)
    assert loaded.images.shape == glyphs.images.shape
    np.testing.assert_allclose(loaded.images, glyphs.images, atol=0.5 / 255 + 1e-12)
    np.testing.assert_array_equal(loaded.given_labels, glyphs.given_labels)


def test_idx_rejects_bad_magic_and_truncation(glyphs: NoisyDataset, tmp_path) -> None:
    images, labels = tmp_path / "images.idx", tmp_path / "labels.idx"
    write_idx(glyphs, images, labels)
    data = images.read_bytes()
    images.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        load_idx(images, labels)
    images.write_bytes(b"\x00\x00\x09\x99" + data[4:])
    with pytest.raises(FormatError):
        load_idx(images, labels)


def test_batches_cover_every_index_once() -> None:
    parts = batches(10, 3, epoch=2, seed=1)
    assert [len(p) for p in parts] == [3, 3, 3, 1]
    assert sorted(np.concatenate(parts).tolist()) == list(range(10))
    again = batches(10, 3, epoch=2, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))
    other_epoch = np.concatenate(batches(10, 3, epoch=3, seed=1))
    assert not np.array_equal(np.concatenate(parts), other_epoch)


def test_subset_keeps_statistics(glyphs: NoisyDataset) -> None:
    part = glyphs.subset(np.array([0, 5, 9]))
    assert len(part) == 3
    assert part.stats is glyphs.stats
    np.testing.assert_array_equal(part.images[1], glyphs.images[5])
