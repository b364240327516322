"""Co-teaching+ with strong-augmented descent on the small-loss branch."""

import logging
from typing import Optional, Tuple

import numpy as np

from src.models.augmentation import RandAugmentConfig
from src.models.dataset import NoisyDataset
from src.models.strategy import CoTeachPlusConfig, ViewPurpose, ViewRole
from src.services.augment import render_policy, render_views
from src.services.data import batches
from src.services.lossmodel import per_sample_losses
from src.services.nn import one_hot, predict_proba
from src.services.strategies import (
    SALT_COTEACH,
    EpochContext,
    TaggedBatch,
    ce_step,
    r_schedule,
    select_small_loss,
)

logger = logging.getLogger(__name__)


def select_pair(
    ctx: EpochContext, analysis: TaggedBatch, labels: np.ndarray, keep: float
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Small-loss selections of both networks (positions into the batch).

    Works on the disagreement subset when the networks' predicted classes
    differ anywhere in the batch, otherwise on the whole batch.
    """
    images = [ctx.audit.observe(ViewPurpose.SELECT, analysis) for _ in ctx.nets]
    predicted = [
        np.argmax(predict_proba(net, imgs), axis=1) for net, imgs in zip(ctx.nets, images)
    ]
    disagree = np.flatnonzero(predicted[0] != predicted[1])
    pool = disagree if disagree.size else np.arange(labels.size)
    selections = []
    for net, imgs in zip(ctx.nets, images):
        losses = per_sample_losses(net, imgs[pool], labels[pool])
        selections.append(pool[select_small_loss(losses, keep)])
    return selections[0], selections[1], bool(disagree.size)


def coteaching_plus_epoch(
    ctx: EpochContext,
    dataset: NoisyDataset,
    cfg: CoTeachPlusConfig,
    batch_size: int = 32,
    randaugment: Optional[RandAugmentConfig] = None,
    pad: int = 2,
) -> EpochContext:
    """One epoch; ``cfg`` must be resolved so that ``tau`` is set.

    Batches where the networks disagree update on a fresh view rendered under
    the analysis policy (salt ``SALT_COTEACH + 1``). It is new pixels fed to a
    gradient step, so the audit records it as ``update:descent``, not as an
    analysis view.
    """
    if cfg.tau is None:
        raise ValueError("CoTeachPlusConfig must be resolved before training")
    randaugment = randaugment or cfg.randaugment
    ctx.set_lr()
    keep = r_schedule(ctx.epoch, cfg.Tk, cfg.tau)
    strategy = cfg.strategy
    losses = []
    disagreement_batches = 0
    for idx in batches(dataset, batch_size, ctx.epoch, ctx.seed):
        analysis, descent = render_views(
            dataset, idx, strategy, 1, ctx.seed, ctx.epoch, SALT_COTEACH, randaugment, pad
        )
        labels = dataset.given_labels[idx]
        sel_1, sel_2, disagreed = select_pair(
            ctx, TaggedBatch(ViewRole.ANALYSIS, analysis[0]), labels, keep
        )
        if disagreed:
            disagreement_batches += 1
            # Disagreement updates use a fresh view under the analysis policy.
            update_images = render_policy(
                dataset,
                idx,
                strategy.analysis_policy,
                ctx.seed,
                ctx.epoch,
                SALT_COTEACH + 1,
                randaugment,
                pad,
            )
        else:
            update_images = descent[0]

        targets = one_hot(labels, dataset.num_classes)
        # Each network learns from the samples its peer selected.
        for k, peer_selection in ((0, sel_2), (1, sel_1)):
            if peer_selection.size == 0:
                continue
            losses.append(
                ce_step(
                    ctx.nets[k],
                    ctx.states[k],
                    TaggedBatch(ViewRole.DESCENT, update_images[peer_selection]),
                    targets[peer_selection],
                    ctx.audit,
                )
            )
    logger.debug(
        "epoch %d: keep %.3f, %d disagreement batches", ctx.epoch, keep, disagreement_batches
    )
    ctx.train_loss = float(np.mean(losses)) if losses else float("nan")
    ctx.epoch += 1
    ctx.check_finite()
    return ctx
