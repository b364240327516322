import numpy as np
import pytest
from scipy import stats

from src.models.mixture import GmmFit2
from src.services.lossmodel import (
    VARIANCE_FLOOR,
    bmm_posterior,
    bmm_responsibilities,
    co_divide,
    fit_bmm2,
    fit_gmm2,
    gmm_posterior,
    loss_histogram,
    loss_record,
    normalize_losses,
    separation_auc,
)
from src.utils.errors import DiagnosticError, InsufficientDataError, NumericError


def _bimodal(rng: np.random.Generator, n: int = 500) -> np.ndarray:
    low = rng.normal(0.1, 0.03, size=n // 2)
    high = rng.normal(0.8, 0.05, size=n - n // 2)
    return np.clip(np.concatenate([low, high]), 0.0, 1.0)


def _gmm_loglik(x: np.ndarray, fit: GmmFit2) -> float:
    dens = fit.weights[None, :] * stats.norm.pdf(
        x[:, None], fit.means[None, :], np.sqrt(fit.variances)[None, :]
    )
    return float(np.log(dens.sum(axis=1)).sum())


def test_normalize_examples() -> None:
    np.testing.assert_allclose(normalize_losses(np.array([1.0, 2.0, 3.0])), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_losses(np.array([5.0, 5.0, 5.0])), [0.5, 0.5, 0.5])


def test_normalize_is_affine_invariant() -> None:
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(2, 30)))
        scale, shift = rng.uniform(0.1, 10), rng.normal()
        np.testing.assert_allclose(normalize_losses(scale * x + shift), normalize_losses(x), atol=1e-9)


def test_normalize_rejects_bad_input() -> None:
    with pytest.raises(NumericError):
        normalize_losses(np.array([0.1, np.nan]))
    with pytest.raises(InsufficientDataError):
        normalize_losses(np.array([]))


def test_gmm_recovers_bimodal_means() -> None:
    rng = np.random.default_rng(1)
    x = _bimodal(rng)
    fit = fit_gmm2(x, max_iter=100)
    np.testing.assert_allclose(fit.means, [0.1, 0.8], atol=0.03)
    assert fit.means[0] <= fit.means[1]
    assert fit.weights.sum() == pytest.approx(1.0)
    truth = GmmFit2(
        means=np.array([0.1, 0.8]),
        variances=np.array([0.03**2, 0.05**2]),
        weights=np.array([0.5, 0.5]),
        iterations=0,
        converged=True,
    )
    assert _gmm_loglik(x, fit) >= _gmm_loglik(x, truth) - 1e-6


def test_gmm_fits_on_ten_datasets_are_monotone() -> None:
    for seed in range(10):
        rng = np.random.default_rng(seed)
        mu = np.sort(rng.uniform(0.05, 0.95, size=2))
        if mu[1] - mu[0] < 0.4:
            mu = np.array([0.2, 0.75])
        x = np.clip(
            np.concatenate([rng.normal(mu[0], 0.04, 200), rng.normal(mu[1], 0.04, 200)]), 0, 1
        )
        fit = fit_gmm2(x, max_iter=50)
        assert np.all(np.diff(fit.log_likelihoods) >= -1e-8)
        np.testing.assert_allclose(fit.means, mu, atol=0.05)


def test_gmm_degenerate_data_uses_variance_floor() -> None:
    fit = fit_gmm2(np.full(20, 0.3))
    assert np.all(np.isfinite(fit.means)) and np.all(np.isfinite(fit.variances))
    assert np.all(fit.variances >= VARIANCE_FLOOR)
    assert fit.converged


def test_gmm_is_permutation_invariant() -> None:
    rng = np.random.default_rng(2)
    x = _bimodal(rng, 200)
    a = fit_gmm2(x)
    b = fit_gmm2(rng.permutation(x))
    np.testing.assert_allclose(a.means, b.means, rtol=1e-9)
    np.testing.assert_allclose(a.variances, b.variances, rtol=1e-9)


def test_gmm_needs_ten_samples() -> None:
    with pytest.raises(InsufficientDataError):
        fit_gmm2(np.linspace(0, 1, 9))


def test_gmm_posterior_properties() -> None:
    separated = GmmFit2(
        means=np.array([0.1, 0.8]),
        variances=np.array([0.001, 0.001]),
        weights=np.array([0.5, 0.5]),
        iterations=1,
        converged=True,
    )
    assert gmm_posterior(separated, np.array([0.1]))[0] > 0.99
    grid = np.linspace(0, 1, 101)
    w = gmm_posterior(separated, grid)
    assert np.all(np.diff(w) <= 1e-12)
    assert np.all((w >= 0) & (w <= 1))

    symmetric = GmmFit2(
        means=np.array([0.4, 0.4]),
        variances=np.array([0.01, 0.01]),
        weights=np.array([0.5, 0.5]),
        iterations=1,
        converged=True,
    )
    np.testing.assert_allclose(gmm_posterior(symmetric, grid), 0.5)


def test_gmm_posterior_flags_low_mode_as_clean() -> None:
    x = _bimodal(np.random.default_rng(3))
    w = gmm_posterior(fit_gmm2(x), x)
    low_mode = x < 0.45
    assert np.mean(w[low_mode] > 0.9) >= 0.9


def test_bmm_recovers_component_means() -> None:
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.beta(2, 10, 250), rng.beta(10, 2, 250)])
    fit = fit_bmm2(x, max_iter=100)
    np.testing.assert_allclose(fit.means, [1 / 6, 5 / 6], atol=0.05)
    assert np.all(np.diff(fit.log_likelihoods) >= -1e-8)
    assert fit.weights.sum() == pytest.approx(1.0)


def test_bmm_on_unimodal_data_stays_centered() -> None:
    x = np.random.default_rng(5).beta(5, 5, 500)
    fit = fit_bmm2(x, max_iter=50)
    assert np.all((fit.means > 0.2) & (fit.means < 0.8))
    assert float(np.dot(fit.weights, fit.means)) == pytest.approx(0.5, abs=0.05)


def test_bmm_responsibilities_are_distributions() -> None:
    rng = np.random.default_rng(6)
    x = np.concatenate([rng.beta(2, 8, 100), rng.beta(8, 2, 100)])
    resp = bmm_responsibilities(fit_bmm2(x), rng.random(300))
    assert np.all((resp >= 0) & (resp <= 1))
    np.testing.assert_allclose(resp.sum(axis=1), 1.0)


def test_bmm_posterior_flags_low_losses_as_clean() -> None:
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.beta(2, 8, 200), rng.beta(8, 2, 200)])
    clean = bmm_posterior(fit_bmm2(x), np.array([0.05, 0.95]))
    assert clean[0] > 0.9
    assert clean[1] < 0.1


def test_loss_record_keeps_raw_and_normalized_losses() -> None:
    record = loss_record(4, [2.0, 1.0, 3.0])
    assert record.epoch == 4
    np.testing.assert_array_equal(record.raw, [2.0, 1.0, 3.0])
    np.testing.assert_allclose(record.normalized, [0.5, 0.0, 1.0])
    with pytest.raises(NumericError):
        loss_record(0, [1.0, np.nan])


def test_bmm_needs_ten_samples() -> None:
    with pytest.raises(InsufficientDataError):
        fit_bmm2(np.full(5, 0.5))


def test_co_divide_examples() -> None:
    split = co_divide(np.array([0.9, 0.1]), 0.5)
    assert split.labeled.tolist() == [0]
    assert split.unlabeled.tolist() == [1]
    np.testing.assert_array_equal(split.labeled_w, [0.9])

    ties = co_divide(np.full(4, 0.5), 0.5)
    assert ties.labeled.tolist() == [0, 1, 2, 3]


def test_co_divide_partitions_indices() -> None:
    rng = np.random.default_rng(7)
    for _ in range(100):
        w = rng.random(int(rng.integers(1, 50)))
        split = co_divide(w, float(rng.uniform(0.05, 0.95)))
        union = np.sort(np.concatenate([split.labeled, split.unlabeled]))
        np.testing.assert_array_equal(union, np.arange(w.size))
        assert np.intersect1d(split.labeled, split.unlabeled).size == 0
        assert split.size == w.size


def test_co_divide_fallback_takes_top_half() -> None:
    w = np.array([0.1, 0.4, 0.2, 0.3, 0.05])
    split = co_divide(w, 0.5, fallback=True)
    assert split.fallback_used
    assert sorted(split.labeled.tolist()) == [1, 2, 3]
    assert co_divide(w, 0.5).labeled.size == 0


def test_separation_auc_examples() -> None:
    flip = np.array([False, False, True, True])
    assert separation_auc(np.array([0.0, 0.0, 1.0, 1.0]), flip) == 1.0
    assert separation_auc(np.array([0.1, 0.2, 0.15, 0.3]), flip) == pytest.approx(0.75)
    assert separation_auc(np.ones(4), flip) == pytest.approx(0.5)

    rng = np.random.default_rng(8)
    same = rng.random(4000)
    assert separation_auc(same, rng.random(4000) < 0.5) == pytest.approx(0.5, abs=0.05)


def test_separation_auc_is_rank_invariant() -> None:
    rng = np.random.default_rng(9)
    for _ in range(100):
        losses = rng.random(30)
        flip = np.zeros(30, dtype=bool)
        flip[rng.choice(30, size=10, replace=False)] = True
        assert separation_auc(np.exp(3 * losses), flip) == pytest.approx(
            separation_auc(losses, flip)
        )


def test_separation_auc_needs_both_groups() -> None:
    with pytest.raises(DiagnosticError):
        separation_auc(np.array([0.1, 0.2]), np.array([False, False]))


def test_loss_histogram_counts_every_sample() -> None:
    rng = np.random.default_rng(10)
    values = normalize_losses(rng.random(137))
    flip = rng.random(137) < 0.3
    bins = loss_histogram(values, flip, bins=20)
    assert len(bins) == 20
    assert sum(b.clean_count + b.noisy_count for b in bins) == 137
    assert sum(b.noisy_count for b in bins) == int(flip.sum())
    assert bins[0].bin_left == 0.0
