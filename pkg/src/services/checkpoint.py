"""NLAB binary checkpoints.

Layout (little-endian): b"NLAB", u32 version, u32 layer count, u32 input ndim,
u32 input dims..., u32 num_classes; then per layer a u8 kind tag and a u8
parameter count, and per parameter u32 ndim, u32 dims..., f64 values.
"""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, List, Union

import numpy as np

from src.models.network import Layer, LayerKind, Network
from src.utils.errors import FormatError, HarnessIOError

logger = logging.getLogger(__name__)

MAGIC = b"NLAB"
VERSION = 1

_TAGS = {
    LayerKind.DENSE: 0,
    LayerKind.CONV2D: 1,
    LayerKind.RELU: 2,
    LayerKind.FLATTEN: 3,
}
_KINDS = {tag: kind for kind, tag in _TAGS.items()}


def _write_u32s(handle: BinaryIO, *values: int) -> None:
    handle.write(struct.pack(f"<{len(values)}I", *values))


def _read_exact(handle: BinaryIO, size: int) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise FormatError("truncated checkpoint")
    return data


def _read_u32s(handle: BinaryIO, count: int) -> List[int]:
    return list(struct.unpack(f"<{count}I", _read_exact(handle, 4 * count)))


def _write_array(handle: BinaryIO, array: np.ndarray) -> None:
    _write_u32s(handle, array.ndim, *array.shape)
    handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_array(handle: BinaryIO) -> np.ndarray:
    (ndim,) = _read_u32s(handle, 1)
    shape = _read_u32s(handle, ndim)
    count = int(np.prod(shape)) if shape else 1
    values = np.frombuffer(_read_exact(handle, 8 * count), dtype="<f8")
    return values.reshape(shape).astype(np.float64)


def dump_network(net: Network, handle: BinaryIO) -> None:
    handle.write(MAGIC)
    _write_u32s(handle, VERSION, len(net.layers), len(net.input_shape), *net.input_shape)
    _write_u32s(handle, net.num_classes)
    for layer in net.layers:
        params = [] if not layer.has_parameters else [layer.weight, layer.bias]
        handle.write(struct.pack("<BB", _TAGS[layer.kind], len(params)))
        for array in params:
            _write_array(handle, array)


def parse_network(handle: BinaryIO) -> Network:
    if _read_exact(handle, 4) != MAGIC:
        raise FormatError("not an NLAB checkpoint (bad magic)")
    version, layer_count, ndim = _read_u32s(handle, 3)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    input_shape = tuple(_read_u32s(handle, ndim))
    (num_classes,) = _read_u32s(handle, 1)
    layers = []
    for _ in range(layer_count):
        tag, param_count = struct.unpack("<BB", _read_exact(handle, 2))
        if tag not in _KINDS:
            raise FormatError(f"unknown layer tag {tag}")
        params = [_read_array(handle) for _ in range(param_count)]
        weight, bias = (params + [None, None])[:2]
        layers.append(Layer(_KINDS[tag], weight, bias))
    return Network(layers=layers, input_shape=input_shape, num_classes=num_classes)


def save_checkpoint(net: Network, path: Union[str, Path]) -> Path:
    target = Path(path)
    try:
        with open(target, "wb") as handle:
            dump_network(net, handle)
    except OSError as e:
        raise HarnessIOError(target, e) from e
    logger.debug("checkpoint written to %s", target)
    return target


def load_checkpoint(path: Union[str, Path]) -> Network:
    source = Path(path)
    try:
        with open(source, "rb") as handle:
            return parse_network(handle)
    except OSError as e:
        raise HarnessIOError(source, e) from e
