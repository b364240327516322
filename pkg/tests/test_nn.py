import numpy as np
import pytest

from src.models.network import LayerKind, LrSchedule, Network, OptimizerState
from src.services.nn import (
    backward,
    build_mlp,
    build_network,
    confidence_penalty,
    forward,
    forward_cached,
    grad_check,
    lr_at,
    one_hot,
    predict_proba,
    sgd_step,
    softmax,
    softmax_xent,
    squared_error,
)
from src.utils.errors import ConfigurationError, NumericError

# Central differences with a small step keep ReLU kinks out of reach.
EPS = 1e-6


def _soft_targets(rng: np.random.Generator, n: int, classes: int) -> np.ndarray:
    raw = rng.random((n, classes))
    return raw / raw.sum(axis=1, keepdims=True)


def test_build_network_layout(small_net: Network) -> None:
    kinds = [layer.kind for layer in small_net.layers]
    assert kinds == [
        LayerKind.CONV2D,
        LayerKind.RELU,
        LayerKind.FLATTEN,
        LayerKind.DENSE,
        LayerKind.RELU,
        LayerKind.DENSE,
    ]
    assert small_net.layers[0].weight.shape == (3, 3, 1, 2)
    assert small_net.layers[3].weight.shape == (14 * 14 * 2, 8)
    assert small_net.parameter_count == sum(p.size for p in small_net.parameters())


def test_forward_rejects_wrong_input_shape(small_net: Network) -> None:
    with pytest.raises(ConfigurationError):
        forward(small_net, np.zeros((2, 12, 12, 1)))


def test_build_network_rejects_tiny_inputs(rng: np.random.Generator) -> None:
    with pytest.raises(ConfigurationError):
        build_network((2, 2, 1), 3, rng)


def test_softmax_rows_are_distributions(rng: np.random.Generator) -> None:
    probs = softmax(rng.normal(size=(5, 4)) * 50)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs >= 0)


def test_softmax_xent_matches_definition(rng: np.random.Generator) -> None:
    logits = rng.normal(size=(3, 4))
    targets = one_hot(np.array([0, 2, 3]), 4)
    loss, per_sample, grad = softmax_xent(logits, targets)
    expected = -np.log(softmax(logits)[np.arange(3), [0, 2, 3]])
    np.testing.assert_allclose(per_sample, expected)
    assert loss == pytest.approx(expected.mean())
    np.testing.assert_allclose(grad, (softmax(logits) - targets) / 3)


def test_softmax_xent_rejects_non_finite_logits() -> None:
    logits = np.array([[0.0, np.inf]])
    with pytest.raises(NumericError):
        softmax_xent(logits, np.array([[1.0, 0.0]]))


def test_grad_check_conv_network(rng: np.random.Generator) -> None:
    net = build_network((6, 6, 1), 3, rng, conv_filters=2, hidden=5)
    batch = (rng.normal(size=(3, 6, 6, 1)), _soft_targets(rng, 3, 3))
    assert grad_check(net, batch, eps=EPS) < 1e-4


def test_grad_check_conv_network_color(rng: np.random.Generator) -> None:
    net = build_network((5, 5, 3), 2, rng, conv_filters=2, hidden=4)
    batch = (rng.normal(size=(2, 5, 5, 3)), _soft_targets(rng, 2, 2))
    assert grad_check(net, batch, eps=EPS) < 1e-4


def test_grad_check_random_mlps_with_confidence_penalty() -> None:
    def objective(net, batch):
        inputs, targets = batch
        logits, cache = forward_cached(net, inputs)
        loss, _, grad = softmax_xent(logits, targets)
        penalty, grad_penalty = confidence_penalty(logits)
        return loss + penalty, backward(net, cache, grad + grad_penalty)

    for seed in range(20):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5))]
        net = build_mlp(sizes, rng)
        batch = (rng.normal(size=(4, sizes[0])), _soft_targets(rng, 4, sizes[-1]))
        assert grad_check(net, batch, eps=EPS, objective=objective) < 1e-4, seed


def _squared_error_objective(scale: float = 1.0):
    def objective(net, batch):
        inputs, targets = batch
        logits, cache = forward_cached(net, inputs)
        loss, grad = squared_error(logits, targets)
        return loss, [scale * g for g in backward(net, cache, grad)]

    return objective


def test_grad_check_is_exact_on_a_quadratic(rng: np.random.Generator) -> None:
    net = build_mlp([5, 3], rng)
    batch = (rng.normal(size=(4, 5)), rng.normal(size=(4, 3)))
    error = grad_check(net, batch, objective=_squared_error_objective(), abs_floor=1e-9)
    assert error < 1e-8


def test_grad_check_flags_a_corrupted_gradient(rng: np.random.Generator) -> None:
    net = build_mlp([5, 3], rng)
    batch = (rng.normal(size=(4, 5)), rng.normal(size=(4, 3)))
    assert grad_check(net, batch, objective=_squared_error_objective(1.5)) > 0.1


def test_squared_error_value_and_gradient() -> None:
    logits = np.array([[1.0, 2.0], [0.0, -1.0]])
    targets = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, grad = squared_error(logits, targets)
    assert loss == pytest.approx(0.5 * (4.0 + 4.0) / 2)
    np.testing.assert_allclose(grad, [[0.0, 1.0], [0.0, -1.0]])


def test_grad_check_leaves_network_untouched(rng: np.random.Generator) -> None:
    net = build_mlp([3, 4, 2], rng)
    before = [p.copy() for p in net.parameters()]
    grad_check(net, (rng.normal(size=(2, 3)), one_hot(np.array([0, 1]), 2)))
    for old, new in zip(before, net.parameters()):
        np.testing.assert_array_equal(old, new)


def test_confidence_penalty_is_negative_entropy() -> None:
    value, _ = confidence_penalty(np.zeros((2, 4)))
    assert value == pytest.approx(-np.log(4))


def test_sgd_step_momentum_and_weight_decay(rng: np.random.Generator) -> None:
    net = build_mlp([2, 2], rng)
    state = OptimizerState.for_network(net, lr=0.1, momentum=0.5, weight_decay=0.01)
    theta = [p.copy() for p in net.parameters()]
    grads = [np.ones_like(p) for p in theta]

    sgd_step(net, grads, state)
    v1 = [1.0 + 0.01 * t for t in theta]
    after_one = [t - 0.1 * v for t, v in zip(theta, v1)]
    for p, expected in zip(net.parameters(), after_one):
        np.testing.assert_allclose(p, expected)

    sgd_step(net, grads, state)
    v2 = [0.5 * v + 1.0 + 0.01 * t for v, t in zip(v1, after_one)]
    for p, t, v in zip(net.parameters(), after_one, v2):
        np.testing.assert_allclose(p, t - 0.1 * v)
    assert state.steps == 2


def test_sgd_step_rejects_mismatched_gradients(rng: np.random.Generator) -> None:
    net = build_mlp([2, 2], rng)
    state = OptimizerState.for_network(net)
    with pytest.raises(ConfigurationError):
        sgd_step(net, [np.ones((3, 3)), np.ones(2)], state)


def test_lr_schedule_drops_once() -> None:
    schedule = LrSchedule(base=0.02, drop_epoch=40, factor=10)
    assert lr_at(0, schedule) == 0.02
    assert lr_at(39, schedule) == 0.02
    assert lr_at(40, schedule) == pytest.approx(0.002)
    with pytest.raises(ConfigurationError):
        lr_at(-1, schedule)


def test_predict_proba_chunks_match_single_pass(small_net: Network, rng) -> None:
    batch = rng.random((7, 16, 16, 1))
    np.testing.assert_allclose(
        predict_proba(small_net, batch, chunk=3), softmax(forward(small_net, batch))
    )


def test_network_copy_is_independent(small_net: Network) -> None:
    clone = small_net.copy()
    clone.parameters()[0][...] = 0.0
    assert not np.all(small_net.parameters()[0] == 0.0)
