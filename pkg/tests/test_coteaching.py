import numpy as np
import pytest

from src.models.network import LrSchedule, OptimizerState
from src.models.strategy import CoTeachPlusConfig, ViewPurpose, ViewRole
from src.services.augment import plain_images
from src.services.coteaching import coteaching_plus_epoch, select_pair
from src.services.nn import one_hot
from src.services.strategies import EpochContext, TaggedBatch

SCHEDULE = LrSchedule(base=0.02, drop_epoch=10, factor=10.0)


def _context(data, seed: int = 4) -> EpochContext:
    return EpochContext.create(data.image_shape, data.num_classes, 2, seed, SCHEDULE)


def test_tau_defaults_to_the_noise_rate() -> None:
    assert CoTeachPlusConfig().resolved(0.5).tau == 0.5
    assert CoTeachPlusConfig().resolved(0.0).tau == 0.05
    assert CoTeachPlusConfig(tau=0.3).resolved(0.8).tau == 0.3


def test_unresolved_config_is_rejected(noisy_glyphs) -> None:
    with pytest.raises(ValueError):
        coteaching_plus_epoch(_context(noisy_glyphs), noisy_glyphs, CoTeachPlusConfig())


def test_agreeing_networks_select_from_the_whole_batch(noisy_glyphs, small_net) -> None:
    net = small_net
    ctx = EpochContext(
        nets=[net, net.copy()],
        states=[OptimizerState.for_network(net, 0.02) for _ in range(2)],
        schedule=SCHEDULE,
        seed=0,
    )
    images = plain_images(noisy_glyphs, np.arange(8))
    labels = noisy_glyphs.given_labels[:8]
    sel_1, sel_2, disagreed = select_pair(
        ctx, TaggedBatch(ViewRole.ANALYSIS, images), labels, keep=0.5
    )
    assert not disagreed
    assert sel_1.size == sel_2.size == 4
    np.testing.assert_array_equal(sel_1, sel_2)
    assert ctx.audit.count(ViewPurpose.SELECT, ViewRole.ANALYSIS) == 2


def test_disagreement_restricts_the_pool(mocker, noisy_glyphs) -> None:
    ctx = _context(noisy_glyphs)
    mocker.patch(
        "src.services.coteaching.predict_proba",
        side_effect=[one_hot(np.array([0, 0, 1, 1]), 4), one_hot(np.array([0, 1, 1, 0]), 4)],
    )
    images = plain_images(noisy_glyphs, np.arange(4))
    sel_1, sel_2, disagreed = select_pair(
        ctx, TaggedBatch(ViewRole.ANALYSIS, images), noisy_glyphs.given_labels[:4], keep=0.5
    )
    assert disagreed
    assert sel_1.size == sel_2.size == 1
    assert set(sel_1.tolist()) | set(sel_2.tolist()) <= {1, 3}


def test_epoch_selects_on_analysis_and_updates_on_descent(noisy_glyphs) -> None:
    cfg = CoTeachPlusConfig(Tk=2, warm_up=0).resolved(0.5)
    ctx = coteaching_plus_epoch(_context(noisy_glyphs), noisy_glyphs, cfg, batch_size=16)
    audit = ctx.audit
    assert ctx.epoch == 1
    assert not audit.violations
    assert audit.count(ViewPurpose.SELECT) == audit.count(ViewPurpose.SELECT, ViewRole.ANALYSIS)
    assert audit.count(ViewPurpose.UPDATE) == audit.count(ViewPurpose.UPDATE, ViewRole.DESCENT) > 0
    assert all(net.is_finite() for net in ctx.nets)


def test_epoch_is_deterministic(noisy_glyphs) -> None:
    cfg = CoTeachPlusConfig(Tk=2).resolved(0.5)
    runs = [
        coteaching_plus_epoch(_context(noisy_glyphs), noisy_glyphs, cfg, batch_size=16)
        for _ in range(2)
    ]
    for net_a, net_b in zip(runs[0].nets, runs[1].nets):
        for pa, pb in zip(net_a.parameters(), net_b.parameters()):
            np.testing.assert_array_equal(pa, pb)
