"""M-DYR-H: mixup with dynamic hard bootstrapping, weights from a beta mixture.

The bootstrap weight of a sample is its posterior under the high-loss beta
component, so w=0 trains on the given label and w=1 on the network's own
prediction.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from src.models.augmentation import RandAugmentConfig
from src.models.dataset import NoisyDataset
from src.models.network import Network
from src.models.strategy import MdyrhConfig, ViewPurpose, ViewRole
from src.services.augment import render_views
from src.services.data import batches
from src.services.lossmodel import bmm_posterior, fit_bmm2, normalize_losses
from src.services.nn import (
    PROB_FLOOR,
    backward,
    forward_cached,
    one_hot,
    predict_proba,
    sgd_step,
    softmax,
)
from src.services.strategies import (
    SALT_MDYRH,
    EpochContext,
    TaggedBatch,
    fitting_losses,
    uniform_prior_reg,
)

logger = logging.getLogger(__name__)


def _weighted_ce(log_probs: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> float:
    return float(np.mean(weights * -np.sum(targets * log_probs, axis=1)))


def mdyrh_loss(
    logits: np.ndarray,
    y1: np.ndarray,
    z1: np.ndarray,
    w1: np.ndarray,
    y2: np.ndarray,
    z2: np.ndarray,
    w2: np.ndarray,
    lam: float,
    lambda_r: float = 1.0,
) -> Tuple[float, np.ndarray]:
    """λ(l1 + l2) + (1−λ)(l3 + l4) + λr·Lreg and its gradient w.r.t. the logits.

    l1..l4 are the batch-mean weighted cross-entropies against y¹, z¹, y², z²
    with weights (1−w¹), w¹, (1−w²), w².
    """
    probs = softmax(logits)
    log_probs = np.log(np.maximum(probs, PROB_FLOOR))
    l1 = _weighted_ce(log_probs, y1, 1.0 - w1)
    l2 = _weighted_ce(log_probs, z1, w1)
    l3 = _weighted_ce(log_probs, y2, 1.0 - w2)
    l4 = _weighted_ce(log_probs, z2, w2)
    loss = lam * (l1 + l2) + (1.0 - lam) * (l3 + l4)

    # Every row of the combined target sums to one, so d/dlogits = (p − t)/B.
    target = lam * ((1.0 - w1)[:, None] * y1 + w1[:, None] * z1) + (1.0 - lam) * (
        (1.0 - w2)[:, None] * y2 + w2[:, None] * z2
    )
    grad = (probs - target) / logits.shape[0]
    if lambda_r:
        reg, grad_reg = uniform_prior_reg(logits)
        loss += lambda_r * reg
        grad = grad + lambda_r * grad_reg
    return loss, grad


def mdyrh_objective(
    net: Network,
    mixed_inputs: np.ndarray,
    pairs: Tuple[np.ndarray, ...],
    lam: float,
    lambda_r: float = 1.0,
) -> Tuple[float, List[np.ndarray]]:
    """Loss and parameter gradients; ``pairs`` is (y1, z1, w1, y2, z2, w2)."""
    logits, cache = forward_cached(net, mixed_inputs)
    loss, grad = mdyrh_loss(logits, *pairs, lam=lam, lambda_r=lambda_r)
    return loss, backward(net, cache, grad)


def bootstrap_weights(
    ctx: EpochContext,
    dataset: NoisyDataset,
    cfg: MdyrhConfig,
    loss_views_analysis: bool = False,
    pad: int = 2,
) -> np.ndarray:
    """Fit the beta mixture on current losses; returns per-sample w = 1 − clean probability."""
    raw = fitting_losses(
        ctx.nets[0],
        dataset,
        ctx.audit,
        ctx.seed,
        ctx.epoch,
        use_analysis_views=loss_views_analysis,
        strategy=cfg.strategy,
        randaugment=cfg.randaugment,
        pad=pad,
    )
    normalized = normalize_losses(raw)
    fit = fit_bmm2(normalized)
    clean = bmm_posterior(fit, normalized)
    ctx.clean_probs = [clean]
    logger.debug("epoch %d BMM means %s", ctx.epoch, np.round(fit.means, 3).tolist())
    return 1.0 - clean


def mdyrh_epoch(
    ctx: EpochContext,
    dataset: NoisyDataset,
    cfg: MdyrhConfig,
    batch_size: int = 32,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
    loss_views_analysis: bool = False,
) -> EpochContext:
    randaugment = randaugment or cfg.randaugment
    ctx.set_lr()
    weights = bootstrap_weights(ctx, dataset, cfg, loss_views_analysis, pad)
    net, state = ctx.nets[0], ctx.states[0]
    losses = []
    for b, idx in enumerate(batches(dataset, batch_size, ctx.epoch, ctx.seed)):
        analysis, descent = render_views(
            dataset, idx, cfg.strategy, 1, ctx.seed, ctx.epoch, SALT_MDYRH, randaugment, pad
        )
        guess_view = TaggedBatch(ViewRole.ANALYSIS, analysis[0])
        z = predict_proba(net, ctx.audit.observe(ViewPurpose.PSEUDO_LABEL, guess_view))
        if cfg.hard_bootstrap:
            z = one_hot(np.argmax(z, axis=1), dataset.num_classes)
        y = one_hot(dataset.given_labels[idx], dataset.num_classes)
        w = weights[idx]

        rng = np.random.default_rng([ctx.seed, ctx.epoch, SALT_MDYRH, b])
        lam = float(rng.beta(cfg.alpha, cfg.alpha))
        perm = rng.permutation(idx.size)
        inputs = ctx.audit.observe(ViewPurpose.UPDATE, TaggedBatch(ViewRole.DESCENT, descent[0]))
        mixed = lam * inputs + (1.0 - lam) * inputs[perm]
        loss, grads = mdyrh_objective(
            net, mixed, (y, z, w, y[perm], z[perm], w[perm]), lam, cfg.lambda_r
        )
        sgd_step(net, grads, state)
        losses.append(loss)
    ctx.train_loss = float(np.mean(losses)) if losses else float("nan")
    ctx.epoch += 1
    ctx.check_finite()
    return ctx
