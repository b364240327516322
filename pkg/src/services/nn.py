"""Feedforward networks with analytic gradients and momentum SGD.

Batches are NHWC float64 arrays for convolutional nets and (N, D) arrays for
dense-only nets. Everything here is single-threaded and deterministic; the
functions touch only the network/state they are given.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.models.network import ForwardCache, Layer, LayerKind, LrSchedule, Network, OptimizerState
from src.utils.errors import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

Objective = Callable[[Network, Tuple[np.ndarray, np.ndarray]], Tuple[float, List[np.ndarray]]]


def glorot_uniform(
    shape: Tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator
) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_network(
    input_shape: Tuple[int, int, int],
    num_classes: int,
    rng: np.random.Generator,
    conv_filters: int = 8,
    kernel: int = 3,
    hidden: int = 64,
) -> Network:
    """conv(filters, k×k) → ReLU → flatten → dense(hidden) → ReLU → dense(C)."""
    height, width, channels = input_shape
    if height < kernel or width < kernel:
        raise ConfigurationError(f"input {input_shape} smaller than the {kernel}x{kernel} kernel")
    conv_w = glorot_uniform(
        (kernel, kernel, channels, conv_filters),
        kernel * kernel * channels,
        kernel * kernel * conv_filters,
        rng,
    )
    flat = (height - kernel + 1) * (width - kernel + 1) * conv_filters
    layers = [
        Layer(LayerKind.CONV2D, conv_w, np.zeros(conv_filters)),
        Layer(LayerKind.RELU),
        Layer(LayerKind.FLATTEN),
        Layer(LayerKind.DENSE, glorot_uniform((flat, hidden), flat, hidden, rng), np.zeros(hidden)),
        Layer(LayerKind.RELU),
        Layer(
            LayerKind.DENSE,
            glorot_uniform((hidden, num_classes), hidden, num_classes, rng),
            np.zeros(num_classes),
        ),
    ]
    return Network(layers=layers, input_shape=tuple(input_shape), num_classes=num_classes)


def build_mlp(sizes: Sequence[int], rng: np.random.Generator, relu: bool = True) -> Network:
    if len(sizes) < 2:
        raise ConfigurationError("an MLP needs at least an input and an output size")
    layers: List[Layer] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(
            Layer(
                LayerKind.DENSE,
                glorot_uniform((fan_in, fan_out), fan_in, fan_out, rng),
                np.zeros(fan_out),
            )
        )
        if relu and i < len(sizes) - 2:
            layers.append(Layer(LayerKind.RELU))
    return Network(layers=layers, input_shape=(sizes[0],), num_classes=sizes[-1])


def forward_cached(net: Network, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != tuple(net.input_shape):
        raise ConfigurationError(
            f"batch shape {x.shape[1:]} does not match network input {tuple(net.input_shape)}"
        )
    cache = ForwardCache()
    for layer in net.layers:
        cache.inputs.append(x)
        if layer.kind == LayerKind.DENSE:
            if x.ndim != 2 or x.shape[1] != layer.weight.shape[0]:
                raise ConfigurationError(
                    f"dense layer expects {layer.weight.shape[0]} features, got {x.shape[1:]}"
                )
            x = x @ layer.weight + layer.bias
        elif layer.kind == LayerKind.CONV2D:
            kh, kw, c_in, _ = layer.weight.shape
            if x.ndim != 4 or x.shape[3] != c_in:
                raise ConfigurationError(f"conv2d layer expects {c_in} channels, got {x.shape[1:]}")
            windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
            x = np.einsum("nhwcij,ijcf->nhwf", windows, layer.weight, optimize=True) + layer.bias
        elif layer.kind == LayerKind.RELU:
            x = np.maximum(x, 0.0)
        elif layer.kind == LayerKind.FLATTEN:
            x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != net.num_classes:
        raise ConfigurationError(f"network produced shape {x.shape}, expected (N, {net.num_classes})")
    cache.logits = x
    return x, cache


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return forward_cached(net, batch)[0]


def backward(net: Network, cache: ForwardCache, grad_logits: np.ndarray) -> List[np.ndarray]:
    """Parameter gradients in ``net.parameters()`` order."""
    g = grad_logits
    collected: List[Tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x = cache.inputs[i]
        if layer.kind == LayerKind.DENSE:
            collected.append((x.T @ g, g.sum(axis=0)))
            if i > 0:
                g = g @ layer.weight.T
        elif layer.kind == LayerKind.CONV2D:
            kh, kw, _, _ = layer.weight.shape
            windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
            grad_w = np.einsum("nhwcij,nhwf->ijcf", windows, g, optimize=True)
            collected.append((grad_w, g.sum(axis=(0, 1, 2))))
            if i > 0:
                padded = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
                spread = sliding_window_view(padded, (kh, kw), axis=(1, 2))
                g = np.einsum(
                    "nhwfij,ijcf->nhwc", spread, layer.weight[::-1, ::-1], optimize=True
                )
        elif layer.kind == LayerKind.RELU:
            g = g * (x > 0)
        elif layer.kind == LayerKind.FLATTEN:
            g = g.reshape(x.shape)

    grads: List[np.ndarray] = []
    for grad_w, grad_b in reversed(collected):
        grads.extend([grad_w, grad_b])
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _check_logits(logits: np.ndarray) -> None:
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")


def softmax_xent(
    logits: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean soft-target cross-entropy, per-sample losses and d loss / d logits."""
    _check_logits(logits)
    if targets.shape != logits.shape:
        raise ConfigurationError(f"targets {targets.shape} do not match logits {logits.shape}")
    probs = softmax(logits)
    per_sample = -np.sum(targets * np.log(np.maximum(probs, PROB_FLOOR)), axis=1)
    grad = (probs - targets) / logits.shape[0]
    return float(per_sample.mean()), per_sample, grad


def confidence_penalty(logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Negative entropy of softmax(logits), batch-averaged; minimizing it discourages confidence."""
    _check_logits(logits)
    probs = softmax(logits)
    log_probs = np.log(np.maximum(probs, PROB_FLOOR))
    neg_entropy = np.sum(probs * log_probs, axis=1)
    grad = probs * (log_probs - neg_entropy[:, None]) / logits.shape[0]
    return float(neg_entropy.mean()), grad


def squared_error(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = logits - targets
    return float(0.5 * np.sum(diff**2) / logits.shape[0]), diff / logits.shape[0]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def sgd_step(
    net: Network, grads: Sequence[np.ndarray], state: OptimizerState
) -> Tuple[Network, OptimizerState]:
    """v ← μv + g + wd·θ; θ ← θ − lr·v, applied in place."""
    params = net.parameters()
    if len(grads) != len(params) or len(state.buffers) != len(params):
        raise ConfigurationError("gradient/buffer count does not match the network parameters")
    for param, grad, buf in zip(params, grads, state.buffers):
        if grad.shape != param.shape or buf.shape != param.shape:
            raise ConfigurationError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        buf *= state.momentum
        buf += grad + state.weight_decay * param
        param -= state.lr * buf
    state.steps += 1
    return net, state


def lr_at(epoch: int, schedule: LrSchedule) -> float:
    if epoch < 0:
        raise ConfigurationError(f"epoch must be non-negative, got {epoch}")
    if epoch < schedule.drop_epoch:
        return schedule.base
    return schedule.base / schedule.factor


def predict_proba(net: Network, batch: np.ndarray, chunk: int = 256) -> np.ndarray:
    parts = [softmax(forward(net, batch[i : i + chunk])) for i in range(0, len(batch), chunk)]
    if not parts:
        return np.zeros((0, net.num_classes))
    return np.concatenate(parts, axis=0)


def cross_entropy_objective(
    net: Network, batch: Tuple[np.ndarray, np.ndarray]
) -> Tuple[float, List[np.ndarray]]:
    inputs, targets = batch
    logits, cache = forward_cached(net, inputs)
    loss, _, grad = softmax_xent(logits, targets)
    return loss, backward(net, cache, grad)


def grad_check(
    net: Network,
    batch: Tuple[np.ndarray, np.ndarray],
    eps: float = 1e-4,
    objective: Optional[Objective] = None,
    abs_floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Entries whose absolute disagreement is within ``abs_floor`` count as exact.
    The network is restored bit-for-bit afterwards.
    """
    objective = objective or cross_entropy_objective
    _, analytic = objective(net, batch)
    worst = 0.0
    for param, grad in zip(net.parameters(), analytic):
        flat = param.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            loss_plus, _ = objective(net, batch)
            flat[i] = original - eps
            loss_minus, _ = objective(net, batch)
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            diff = abs(grad_flat[i] - numeric)
            if diff <= abs_floor:
                continue
            worst = max(worst, diff / max(abs(grad_flat[i]), abs(numeric)))
    logger.debug("gradient check on %d parameters: max relative error %.3e", net.parameter_count, worst)
    return worst
