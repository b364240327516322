import numpy as np
import pytest

from src.models.network import Network
from src.services.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from src.services.nn import build_mlp, forward
from src.utils.errors import FormatError, HarnessIOError


def test_checkpoint_restores_parameters_and_outputs(small_net: Network, tmp_path, rng) -> None:
    path = save_checkpoint(small_net, tmp_path / "net.bin")
    restored = load_checkpoint(path)

    assert restored.input_shape == tuple(small_net.input_shape)
    assert restored.num_classes == small_net.num_classes
    assert [layer.kind for layer in restored.layers] == [layer.kind for layer in small_net.layers]
    for a, b in zip(small_net.parameters(), restored.parameters()):
        np.testing.assert_array_equal(a, b)
    batch = rng.random((2, 16, 16, 1))
    np.testing.assert_array_equal(forward(small_net, batch), forward(restored, batch))


def test_checkpoint_bytes_are_deterministic(tmp_path, rng) -> None:
    net = build_mlp([3, 4, 2], rng)
    first = save_checkpoint(net, tmp_path / "a.bin").read_bytes()
    second = save_checkpoint(net, tmp_path / "b.bin").read_bytes()
    assert first == second
    assert first.startswith(MAGIC)


def test_bad_magic_is_rejected(tmp_path) -> None:
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_checkpoint_is_rejected(small_net: Network, tmp_path) -> None:
    path = save_checkpoint(small_net, tmp_path / "net.bin")
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_missing_file_reports_path(tmp_path) -> None:
    missing = tmp_path / "missing.bin"
    with pytest.raises(HarnessIOError, match="missing.bin"):
        load_checkpoint(missing)
