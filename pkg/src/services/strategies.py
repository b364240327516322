"""Training procedures shared by every strategy family.

Holds the pieces the DivideMix, Co-teaching+ and M-DYR-H epochs are built
from (sharpening, refinement, co-guessing, MixMatch, small-loss selection),
plus warm-up, the cross-entropy baseline and test evaluation.

Every forward pass that feeds a decision or an update goes through a
``ViewAudit`` so that analysis-view and descent-view usage can be verified.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.models.augmentation import (
    AugStrategy,
    PolicyKind,
    RandAugmentConfig,
    WarmupVariant,
)
from src.models.dataset import NoisyDataset
from src.models.network import LrSchedule, Network, OptimizerState
from src.models.strategy import ViewPurpose, ViewRole
from src.services.augment import plain_images, render_policy
from src.services.data import batches
from src.services.lossmodel import per_sample_losses
from src.services.nn import (
    PROB_FLOOR,
    backward,
    build_network,
    confidence_penalty,
    forward_cached,
    lr_at,
    one_hot,
    predict_proba,
    sgd_step,
    softmax,
    softmax_xent,
)
from src.utils.errors import DiagnosticError, NumericError

logger = logging.getLogger(__name__)

# Salts keep the per-sample augmentation streams of different phases apart.
SALT_WARMUP = 100
SALT_CE = 200
SALT_DIVIDEMIX = 300
SALT_COTEACH = 400
SALT_MDYRH = 500
SALT_LOSSES = 600

_ALLOWED_ROLES = {
    ViewPurpose.FIT: {ViewRole.PLAIN, ViewRole.ANALYSIS},
    ViewPurpose.PSEUDO_LABEL: {ViewRole.PLAIN, ViewRole.ANALYSIS},
    ViewPurpose.SELECT: {ViewRole.PLAIN, ViewRole.ANALYSIS},
    ViewPurpose.UPDATE: {ViewRole.DESCENT},
    ViewPurpose.EVALUATE: {ViewRole.PLAIN},
}


@dataclass(frozen=True)
class TaggedBatch:
    role: ViewRole
    images: np.ndarray


@dataclass
class ViewAudit:
    """Records which view role every forward pass consumed, per purpose."""

    counts: Counter = field(default_factory=Counter)
    violations: List[Tuple[ViewPurpose, ViewRole]] = field(default_factory=list)

    def observe(self, purpose: ViewPurpose, batch: TaggedBatch) -> np.ndarray:
        self.counts[(purpose, batch.role)] += 1
        if batch.role not in _ALLOWED_ROLES[purpose]:
            self.violations.append((purpose, batch.role))
        return batch.images

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def count(self, purpose: ViewPurpose, role: Optional[ViewRole] = None) -> int:
        return sum(n for (p, r), n in self.counts.items() if p == purpose and role in (None, r))

    def assert_clean(self) -> None:
        if self.violations:
            purpose, role = self.violations[0]
            raise DiagnosticError(
                f"{len(self.violations)} view-isolation violations "
                f"(first: {purpose.value} consumed a {role.value} view)"
            )

    def summary(self) -> Dict[str, int]:
        return {f"{p.value}:{r.value}": n for (p, r), n in sorted(self.counts.items())}


@dataclass
class EpochContext:
    """Mutable training state threaded through the strategy epochs."""

    nets: List[Network]
    states: List[OptimizerState]
    schedule: LrSchedule
    seed: int
    epoch: int = 0
    clean_probs: List[Optional[np.ndarray]] = field(default_factory=list)
    train_loss: float = float("nan")
    audit: ViewAudit = field(default_factory=ViewAudit)

    def __post_init__(self) -> None:
        shapes = {tuple(p.shape for p in net.parameters()) for net in self.nets}
        if len(shapes) > 1:
            raise ValueError("networks in one context must share an architecture")
        if not self.clean_probs:
            self.clean_probs = [None] * len(self.nets)

    @classmethod
    def create(
        cls,
        input_shape: Tuple[int, int, int],
        num_classes: int,
        num_nets: int,
        seed: int,
        schedule: LrSchedule,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
    ) -> "EpochContext":
        nets = [
            build_network(input_shape, num_classes, np.random.default_rng([seed, k, 1]))
            for k in range(num_nets)
        ]
        states = [
            OptimizerState.for_network(net, schedule.base, momentum, weight_decay) for net in nets
        ]
        return cls(nets=nets, states=states, schedule=schedule, seed=seed)

    def set_lr(self) -> float:
        lr = lr_at(self.epoch, self.schedule)
        for state in self.states:
            state.lr = lr
        return lr

    def check_finite(self) -> None:
        for k, net in enumerate(self.nets):
            if not net.is_finite():
                raise NumericError(f"network {k} has non-finite parameters after epoch {self.epoch}")


def sharpen(p: np.ndarray, T: float) -> np.ndarray:
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if T == 1.0:
        return np.array(p, dtype=np.float64, copy=True)
    powered = np.power(p, 1.0 / T)
    return powered / powered.sum(axis=-1, keepdims=True)


def refine_label(y: np.ndarray, p_avg: np.ndarray, w) -> np.ndarray:
    """Convex combination w·y + (1−w)·p_avg, row-wise when w is a vector."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    return w * y + (1.0 - w) * p_avg


def average_predictions(
    nets: Sequence[Network],
    views: np.ndarray,
    audit: Optional[ViewAudit] = None,
    purpose: ViewPurpose = ViewPurpose.PSEUDO_LABEL,
    role: ViewRole = ViewRole.ANALYSIS,
) -> np.ndarray:
    """Mean softmax over every (view, net) pair; ``views`` is (M, B, ...)."""
    total = None
    for view in views:
        batch = TaggedBatch(role, view)
        for net in nets:
            images = audit.observe(purpose, batch) if audit is not None else view
            probs = predict_proba(net, images)
            total = probs if total is None else total + probs
    return total / (len(views) * len(nets))


def co_guess(
    u_views: np.ndarray, nets: Sequence[Network], audit: Optional[ViewAudit] = None
) -> np.ndarray:
    """Unsharpened guess (1/2M)·Σ_m [p_θ1(û_m) + p_θ2(û_m)]."""
    return average_predictions(nets, u_views, audit)


def uniform_prior_reg(logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Σ_c π_c log(π_c / p̄_c) for uniform π and batch-mean prediction p̄."""
    probs = softmax(logits)
    n, classes = probs.shape
    prior = np.full(classes, 1.0 / classes)
    mean_pred = np.maximum(probs.mean(axis=0), PROB_FLOOR)
    value = float(np.sum(prior * np.log(prior / mean_pred)))
    g_probs = np.broadcast_to(-prior / mean_pred / n, probs.shape)
    grad = probs * (g_probs - np.sum(g_probs * probs, axis=1, keepdims=True))
    return value, grad


@dataclass(frozen=True)
class MixMatchResult:
    loss: float
    lx: float
    lu: float
    lreg: float
    lam: float
    grads: List[np.ndarray]
    mixed_inputs: np.ndarray
    mixed_targets: np.ndarray


def mixup(
    inputs: np.ndarray, targets: np.ndarray, lam: float, perm: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    return (
        lam * inputs + (1.0 - lam) * inputs[perm],
        lam * targets + (1.0 - lam) * targets[perm],
    )


def mixmatch_objective(
    net: Network,
    mixed_inputs: np.ndarray,
    mixed_targets: np.ndarray,
    n_labeled: int,
    lambda_u: float,
    lambda_r: float,
) -> Tuple[Tuple[float, float, float, float], List[np.ndarray]]:
    """(total, Lx, Lu, Lreg) and parameter gradients for one mixed batch.

    Rows ``[:n_labeled]`` are scored with cross-entropy, the rest with the
    squared error between softmax outputs and targets averaged over rows and
    classes. The regularizer sees every row.
    """
    logits, cache = forward_cached(net, mixed_inputs)
    grad = np.zeros_like(logits)
    lx = 0.0
    if n_labeled:
        lx, _, grad_x = softmax_xent(logits[:n_labeled], mixed_targets[:n_labeled])
        grad[:n_labeled] = grad_x
    lu = 0.0
    n_unlabeled = logits.shape[0] - n_labeled
    if n_unlabeled:
        probs_u = softmax(logits[n_labeled:])
        diff = probs_u - mixed_targets[n_labeled:]
        scale = n_unlabeled * logits.shape[1]
        lu = float(np.sum(diff**2) / scale)
        g_probs = 2.0 * diff / scale
        grad[n_labeled:] += lambda_u * probs_u * (
            g_probs - np.sum(g_probs * probs_u, axis=1, keepdims=True)
        )
    lreg = 0.0
    if lambda_r:
        lreg, grad_reg = uniform_prior_reg(logits)
        grad += lambda_r * grad_reg
    total = lx + lambda_u * lu + lambda_r * lreg
    return (total, lx, lu, lreg), backward(net, cache, grad)


def mixmatch_losses(
    x_desc: np.ndarray,
    y_hat: np.ndarray,
    u_desc: np.ndarray,
    q_hat: np.ndarray,
    net: Network,
    alpha: float,
    lambda_u: float,
    lambda_r: float,
    rng: np.random.Generator,
    clamp_lambda: bool = True,
    lam: Optional[float] = None,
) -> MixMatchResult:
    """Mixup over the shuffled union of labeled and unlabeled descent views, then the three losses."""
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    if clamp_lambda:
        lam = max(lam, 1.0 - lam)
    inputs = np.concatenate([x_desc, u_desc], axis=0)
    targets = np.concatenate([y_hat, q_hat], axis=0)
    perm = rng.permutation(inputs.shape[0])
    mixed_inputs, mixed_targets = mixup(inputs, targets, lam, perm)
    (total, lx, lu, lreg), grads = mixmatch_objective(
        net, mixed_inputs, mixed_targets, x_desc.shape[0], lambda_u, lambda_r
    )
    return MixMatchResult(
        loss=total,
        lx=lx,
        lu=lu,
        lreg=lreg,
        lam=lam,
        grads=grads,
        mixed_inputs=mixed_inputs,
        mixed_targets=mixed_targets,
    )


def linear_rampup(epoch: int, warm_up: int, lambda_u: float, length: int = 16) -> float:
    current = np.clip((epoch - warm_up) / float(length), 0.0, 1.0)
    return float(lambda_u * current)


def r_schedule(e: int, Tk: int, tau: float) -> float:
    if e < 0:
        raise ValueError(f"epoch must be non-negative, got {e}")
    return 1.0 - min(e / Tk * tau, tau)


def select_small_loss(losses: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Indices of the ⌈r·n⌉ smallest losses, ascending by loss (stable on ties)."""
    losses = np.asarray(losses, dtype=np.float64)
    count = min(losses.size, math.ceil(round(keep_fraction * losses.size, 9)))
    return np.argsort(losses, kind="stable")[:count]


def ce_step(
    net: Network,
    state: OptimizerState,
    batch: TaggedBatch,
    targets: np.ndarray,
    audit: ViewAudit,
    penalty: bool = False,
) -> float:
    """One SGD step on cross-entropy, optionally plus the confidence penalty."""
    logits, cache = forward_cached(net, audit.observe(ViewPurpose.UPDATE, batch))
    loss, _, grad = softmax_xent(logits, targets)
    if penalty:
        value, grad_pen = confidence_penalty(logits)
        loss += value
        grad = grad + grad_pen
    sgd_step(net, backward(net, cache, grad), state)
    return loss


def warmup(
    ctx: EpochContext,
    data: NoisyDataset,
    epochs: int,
    strategy: AugStrategy,
    batch_size: int = 32,
    penalty: bool = False,
    p_strong: Optional[float] = None,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> EpochContext:
    """Cross-entropy on given labels for every network.

    Each batch draws a coin and uses strong views when it falls below
    ``p_strong`` (WAW defaults to 0, SAW to 1), otherwise the strategy's
    warm-up base policy.
    """
    if p_strong is None:
        p_strong = 1.0 if strategy.warmup == WarmupVariant.SAW else 0.0
    if not 0.0 <= p_strong <= 1.0:
        raise ValueError(f"p_strong must lie in [0, 1], got {p_strong}")
    base = AugStrategy(variant=strategy.variant, warmup=WarmupVariant.WAW).warmup_policy

    for _ in range(epochs):
        ctx.set_lr()
        losses = []
        for k, (net, state) in enumerate(zip(ctx.nets, ctx.states)):
            for b, idx in enumerate(batches(data, batch_size, ctx.epoch, ctx.seed + k)):
                coin = np.random.default_rng([ctx.seed, ctx.epoch, SALT_WARMUP, k, b]).random()
                kind = PolicyKind.STRONG if coin < p_strong else base
                images = render_policy(
                    data, idx, kind, ctx.seed, ctx.epoch, SALT_WARMUP + k, randaugment, pad
                )
                losses.append(
                    ce_step(
                        net,
                        state,
                        TaggedBatch(ViewRole.DESCENT, images),
                        one_hot(data.given_labels[idx], data.num_classes),
                        ctx.audit,
                        penalty,
                    )
                )
        ctx.train_loss = float(np.mean(losses)) if losses else float("nan")
        logger.debug("warm-up epoch %d: loss %.4f", ctx.epoch, ctx.train_loss)
        ctx.epoch += 1
        ctx.check_finite()
    return ctx


def ce_baseline_epoch(
    ctx: EpochContext,
    dataset: NoisyDataset,
    policy: PolicyKind,
    batch_size: int = 32,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> EpochContext:
    ctx.set_lr()
    net, state = ctx.nets[0], ctx.states[0]
    losses = []
    for idx in batches(dataset, batch_size, ctx.epoch, ctx.seed):
        images = render_policy(dataset, idx, policy, ctx.seed, ctx.epoch, SALT_CE, randaugment, pad)
        losses.append(
            ce_step(
                net,
                state,
                TaggedBatch(ViewRole.DESCENT, images),
                one_hot(dataset.given_labels[idx], dataset.num_classes),
                ctx.audit,
            )
        )
    ctx.train_loss = float(np.mean(losses)) if losses else float("nan")
    ctx.epoch += 1
    ctx.check_finite()
    return ctx


def fitting_losses(
    net: Network,
    dataset: NoisyDataset,
    audit: ViewAudit,
    seed: int,
    epoch: int,
    use_analysis_views: bool = False,
    strategy: Optional[AugStrategy] = None,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> np.ndarray:
    """Per-sample CE used for mixture fitting, on plain images or one analysis view."""
    indices = np.arange(len(dataset))
    if use_analysis_views and strategy is not None:
        images = render_policy(
            dataset, indices, strategy.analysis_policy, seed, epoch, SALT_LOSSES, randaugment, pad
        )
        batch = TaggedBatch(ViewRole.ANALYSIS, images)
    else:
        batch = TaggedBatch(ViewRole.PLAIN, plain_images(dataset))
    return per_sample_losses(net, audit.observe(ViewPurpose.FIT, batch), dataset.given_labels)


def evaluate(
    nets: Sequence[Network], dataset: NoisyDataset, audit: Optional[ViewAudit] = None
) -> float:
    """Top-1 accuracy (%) of the averaged softmax against the true labels, on plain images."""
    if len(dataset) == 0:
        return 0.0
    batch = TaggedBatch(ViewRole.PLAIN, plain_images(dataset))
    images = audit.observe(ViewPurpose.EVALUATE, batch) if audit is not None else batch.images
    probs = sum(predict_proba(net, images) for net in nets) / len(nets)
    return float(100.0 * np.mean(np.argmax(probs, axis=1) == dataset.true_labels))
