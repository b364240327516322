"""DivideMix with augmented descent.

Per network k: the peer's clean probabilities split the data into labeled and
unlabeled parts; labels are refined and unlabeled samples co-guessed from
analysis views; MixMatch and the SGD step run on descent views only.
"""

import logging
from typing import List, Optional

import numpy as np

from src.models.augmentation import RandAugmentConfig
from src.models.dataset import NoisyDataset
from src.models.mixture import SplitResult
from src.models.strategy import DivideMixConfig, ViewPurpose, ViewRole
from src.services.augment import render_views
from src.services.data import batches
from src.services.lossmodel import co_divide, fit_gmm2, gmm_posterior, normalize_losses
from src.services.nn import one_hot, sgd_step
from src.services.strategies import (
    SALT_DIVIDEMIX,
    EpochContext,
    TaggedBatch,
    average_predictions,
    co_guess,
    fitting_losses,
    linear_rampup,
    mixmatch_losses,
    refine_label,
    sharpen,
)

logger = logging.getLogger(__name__)


def clean_probabilities(
    ctx: EpochContext,
    dataset: NoisyDataset,
    cfg: DivideMixConfig,
    loss_views_analysis: bool = False,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> List[np.ndarray]:
    probs = []
    for net in ctx.nets:
        raw = fitting_losses(
            net,
            dataset,
            ctx.audit,
            ctx.seed,
            ctx.epoch,
            use_analysis_views=loss_views_analysis,
            strategy=cfg.strategy,
            randaugment=randaugment,
            pad=pad,
        )
        normalized = normalize_losses(raw)
        fit = fit_gmm2(normalized)
        logger.debug(
            "epoch %d GMM means %.3f/%.3f after %d iterations",
            ctx.epoch,
            fit.means[0],
            fit.means[1],
            fit.iterations,
        )
        probs.append(gmm_posterior(fit, normalized))
    return probs


def _unlabeled_batches(
    split: SplitResult, count: int, batch_size: int, epoch: int, seed: int
) -> List[np.ndarray]:
    if split.unlabeled.size == 0:
        return [np.zeros(0, dtype=np.int64)] * count
    order = np.concatenate(batches(split.unlabeled, split.unlabeled.size, epoch, seed))
    out = []
    for b in range(count):
        positions = np.arange(b * batch_size, (b + 1) * batch_size) % order.size
        out.append(order[positions])
    return out


def _stacked(views: np.ndarray) -> TaggedBatch:
    return TaggedBatch(ViewRole.DESCENT, views.reshape((-1,) + views.shape[2:]))


def train_one(
    ctx: EpochContext,
    k: int,
    dataset: NoisyDataset,
    split: SplitResult,
    cfg: DivideMixConfig,
    batch_size: int,
    randaugment: Optional[RandAugmentConfig],
    pad: int,
) -> float:
    net, peer, state = ctx.nets[k], ctx.nets[1 - k], ctx.states[k]
    w_of = dict(zip(split.labeled.tolist(), split.labeled_w.tolist()))
    labeled_batches = batches(split.labeled, batch_size, ctx.epoch, ctx.seed + k)
    unlabeled_batches = _unlabeled_batches(
        split, len(labeled_batches), batch_size, ctx.epoch, ctx.seed + k + 2
    )
    lambda_u = linear_rampup(ctx.epoch, cfg.warm_up, cfg.lambda_u, cfg.rampup_length)
    salt = SALT_DIVIDEMIX + k
    losses = []
    for b, (lab_idx, unl_idx) in enumerate(zip(labeled_batches, unlabeled_batches)):
        x_an, x_desc = render_views(
            dataset, lab_idx, cfg.strategy, cfg.M, ctx.seed, ctx.epoch, salt, randaugment, pad
        )
        u_an, u_desc = render_views(
            dataset, unl_idx, cfg.strategy, cfg.M, ctx.seed, ctx.epoch, salt, randaugment, pad
        )

        y = one_hot(dataset.given_labels[lab_idx], dataset.num_classes)
        w = np.array([w_of[int(i)] for i in lab_idx])
        p_avg = average_predictions([net], x_an, ctx.audit)
        targets_x = sharpen(refine_label(y, p_avg, w), cfg.T)
        if unl_idx.size:
            targets_u = sharpen(co_guess(u_an, [net, peer], ctx.audit), cfg.T)
        else:
            targets_u = np.zeros((0, dataset.num_classes))

        x_hat = ctx.audit.observe(ViewPurpose.UPDATE, _stacked(x_desc))
        u_hat = ctx.audit.observe(ViewPurpose.UPDATE, _stacked(u_desc))
        result = mixmatch_losses(
            x_hat,
            np.tile(targets_x, (cfg.M, 1)),
            u_hat,
            np.tile(targets_u, (cfg.M, 1)),
            net,
            cfg.alpha,
            lambda_u,
            cfg.lambda_r,
            np.random.default_rng([ctx.seed, ctx.epoch, salt, b]),
            clamp_lambda=cfg.clamp_lambda,
        )
        sgd_step(net, result.grads, state)
        losses.append(result.loss)
    return float(np.mean(losses)) if losses else float("nan")


def dividemix_epoch(
    ctx: EpochContext,
    dataset: NoisyDataset,
    cfg: DivideMixConfig,
    batch_size: int = 32,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
    loss_views_analysis: bool = False,
) -> EpochContext:
    """One co-divided epoch; ``cfg`` must already be resolved for the noise level."""
    if cfg.alpha is None or cfg.lambda_u is None:
        raise ValueError("DivideMixConfig must be resolved before training")
    ctx.set_lr()
    ctx.clean_probs = clean_probabilities(
        ctx, dataset, cfg, loss_views_analysis, randaugment, pad
    )
    losses = []
    for k in range(2):
        split = co_divide(ctx.clean_probs[1 - k], cfg.tau, fallback=True)
        logger.debug(
            "epoch %d net %d: %d labeled / %d unlabeled",
            ctx.epoch,
            k,
            split.labeled.size,
            split.unlabeled.size,
        )
        losses.append(train_one(ctx, k, dataset, split, cfg, batch_size, randaugment, pad))
    ctx.train_loss = float(np.nanmean(losses))
    ctx.epoch += 1
    ctx.check_finite()
    return ctx
