"""Per-sample loss modeling: normalization, 2-component GMM/BMM fits, co-divide.

Component 0 of every fit is the low-loss ("clean") component. EM fits check
that the log-likelihood never decreases and raise ``NumericError`` if it does.
"""

import logging
import math
from typing import List, Tuple

import numpy as np
from scipy import optimize, special, stats

from src.models.mixture import BmmFit2, GmmFit2, HistogramBin, LossRecord, SplitResult
from src.models.network import Network
from src.services.nn import forward, one_hot, softmax_xent
from src.utils.errors import DiagnosticError, InsufficientDataError, NumericError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4
BMM_EPS = 1e-4
MIN_FIT_SAMPLES = 10


def normalize_losses(raw: np.ndarray) -> np.ndarray:
    values = np.asarray(raw, dtype=np.float64)
    if values.size == 0:
        raise InsufficientDataError("cannot normalize an empty loss vector")
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite per-sample loss")
    low, high = values.min(), values.max()
    if high <= low:
        return np.full(values.shape, 0.5)
    return (values - low) / (high - low)


def loss_record(epoch: int, raw: np.ndarray) -> LossRecord:
    raw = np.asarray(raw, dtype=np.float64)
    return LossRecord(epoch=epoch, raw=raw, normalized=normalize_losses(raw))


def per_sample_losses(
    net: Network, images: np.ndarray, labels: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """Cross-entropy of each sample against its given label, evaluated in chunks."""
    parts = []
    for start in range(0, len(images), chunk):
        logits = forward(net, images[start : start + chunk])
        targets = one_hot(labels[start : start + chunk], net.num_classes)
        parts.append(softmax_xent(logits, targets)[1])
    return np.concatenate(parts) if parts else np.zeros(0)


def _check_fit_input(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"mixture fitting needs at least {MIN_FIT_SAMPLES} samples, got {x.size}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values passed to mixture fit")
    return x


def _median_split(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ordered = np.sort(x)
    half = x.size // 2
    return ordered[:half], ordered[half:]


def _check_monotone(previous: float, current: float, what: str) -> None:
    if current < previous - 1e-8 * max(1.0, abs(previous)):
        raise NumericError(f"{what} EM log-likelihood decreased: {previous:.10g} -> {current:.10g}")


def _gmm_log_components(
    x: np.ndarray, means: np.ndarray, variances: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    return np.log(weights)[None, :] + stats.norm.logpdf(
        x[:, None], loc=means[None, :], scale=np.sqrt(variances)[None, :]
    )


def fit_gmm2(values: np.ndarray, max_iter: int = 10, tol: float = 1e-4) -> GmmFit2:
    x = _check_fit_input(values)
    low, high = _median_split(x)
    means = np.array([low.mean(), high.mean()])
    variances = np.maximum(np.array([low.var(), high.var()]), VARIANCE_FLOOR)
    weights = np.array([0.5, 0.5])

    log_comp = _gmm_log_components(x, means, variances, weights)
    ll = float(special.logsumexp(log_comp, axis=1).sum())
    history = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resp = np.exp(log_comp - special.logsumexp(log_comp, axis=1, keepdims=True))
        mass = np.maximum(resp.sum(axis=0), 1e-12)
        means = (resp * x[:, None]).sum(axis=0) / mass
        variances = np.maximum(
            (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / mass, VARIANCE_FLOOR
        )
        weights = mass / mass.sum()

        log_comp = _gmm_log_components(x, means, variances, weights)
        new_ll = float(special.logsumexp(log_comp, axis=1).sum())
        _check_monotone(ll, new_ll, "GMM")
        history.append(new_ll)
        gain, ll = new_ll - ll, new_ll
        if gain < tol:
            converged = True
            break

    order = np.argsort(means, kind="stable")
    return GmmFit2(
        means=means[order],
        variances=variances[order],
        weights=weights[order],
        iterations=iterations,
        converged=converged,
        log_likelihoods=history,
    )


def gmm_posterior(fit: GmmFit2, values: np.ndarray) -> np.ndarray:
    """Posterior of the low-mean component for each value."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    log_comp = _gmm_log_components(x, fit.means, fit.variances, fit.weights)
    return special.expit(log_comp[:, 0] - log_comp[:, 1])


def _beta_moments(mean: float, var: float) -> Tuple[float, float]:
    mean = float(np.clip(mean, BMM_EPS, 1.0 - BMM_EPS))
    var = float(np.clip(var, 1e-8, mean * (1.0 - mean) * 0.999))
    common = mean * (1.0 - mean) / var - 1.0
    return mean * common, (1.0 - mean) * common


def _bmm_log_components(
    x: np.ndarray, alphas: np.ndarray, betas: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    return np.log(weights)[None, :] + stats.beta.logpdf(
        x[:, None], alphas[None, :], betas[None, :]
    )


def _expected_loglik(x: np.ndarray, resp: np.ndarray, a: float, b: float) -> float:
    return float(np.sum(resp * stats.beta.logpdf(x, a, b)))


def _weighted_beta_mle(x: np.ndarray, resp: np.ndarray, a: float, b: float) -> Tuple[float, float]:
    def objective(theta: np.ndarray) -> float:
        return -_expected_loglik(x, resp, float(np.exp(theta[0])), float(np.exp(theta[1])))

    result = optimize.minimize(objective, np.log([a, b]), method="Nelder-Mead")
    return float(np.exp(result.x[0])), float(np.exp(result.x[1]))


def fit_bmm2(values: np.ndarray, max_iter: int = 10, tol: float = 1e-4) -> BmmFit2:
    """Beta mixture EM with a method-of-moments M-step.

    A moment update that would lower a component's expected log-likelihood is
    replaced by a weighted maximum-likelihood step, so the fit stays monotone.
    """
    x = np.clip(_check_fit_input(values), BMM_EPS, 1.0 - BMM_EPS)
    low, high = _median_split(x)
    params = [_beta_moments(low.mean(), low.var()), _beta_moments(high.mean(), high.var())]
    alphas = np.array([p[0] for p in params])
    betas = np.array([p[1] for p in params])
    weights = np.array([0.5, 0.5])

    log_comp = _bmm_log_components(x, alphas, betas, weights)
    ll = float(special.logsumexp(log_comp, axis=1).sum())
    history = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resp = np.exp(log_comp - special.logsumexp(log_comp, axis=1, keepdims=True))
        mass = np.maximum(resp.sum(axis=0), 1e-12)
        for k in range(2):
            mean = float(np.sum(resp[:, k] * x) / mass[k])
            var = float(np.sum(resp[:, k] * (x - mean) ** 2) / mass[k])
            a, b = _beta_moments(mean, var)
            before = _expected_loglik(x, resp[:, k], alphas[k], betas[k])
            if _expected_loglik(x, resp[:, k], a, b) < before:
                a, b = _weighted_beta_mle(x, resp[:, k], alphas[k], betas[k])
                if _expected_loglik(x, resp[:, k], a, b) < before:
                    a, b = alphas[k], betas[k]
            alphas[k], betas[k] = a, b
        weights = mass / mass.sum()

        log_comp = _bmm_log_components(x, alphas, betas, weights)
        new_ll = float(special.logsumexp(log_comp, axis=1).sum())
        _check_monotone(ll, new_ll, "BMM")
        history.append(new_ll)
        gain, ll = new_ll - ll, new_ll
        if gain < tol:
            converged = True
            break

    order = np.argsort(alphas / (alphas + betas), kind="stable")
    return BmmFit2(
        alphas=alphas[order],
        betas=betas[order],
        weights=weights[order],
        iterations=iterations,
        converged=converged,
        log_likelihoods=history,
    )


def bmm_responsibilities(fit: BmmFit2, values: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), BMM_EPS, 1.0 - BMM_EPS)
    log_comp = _bmm_log_components(x, fit.alphas, fit.betas, fit.weights)
    return np.exp(log_comp - special.logsumexp(log_comp, axis=1, keepdims=True))


def bmm_posterior(fit: BmmFit2, values: np.ndarray) -> np.ndarray:
    """Clean probability: posterior of the low-mean beta component."""
    return bmm_responsibilities(fit, values)[:, 0]


def co_divide(w: np.ndarray, tau: float, fallback: bool = False) -> SplitResult:
    """Labeled = {i : w_i >= tau}. With ``fallback`` an empty labeled set becomes the top half by w."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    w = np.asarray(w, dtype=np.float64)
    mask = w >= tau
    used_fallback = False
    if fallback and not mask.any() and w.size:
        keep = np.argsort(-w, kind="stable")[: math.ceil(w.size / 2)]
        mask = np.zeros(w.size, dtype=bool)
        mask[keep] = True
        used_fallback = True
        logger.warning("co-divide produced no labeled samples; using top %d by w", keep.size)
    labeled = np.flatnonzero(mask)
    return SplitResult(
        labeled=labeled,
        labeled_w=w[labeled],
        unlabeled=np.flatnonzero(~mask),
        fallback_used=used_fallback,
    )


def separation_auc(losses: np.ndarray, flip_mask: np.ndarray) -> float:
    """P(loss of a random noisy sample > loss of a random clean sample), ties count 0.5."""
    losses = np.asarray(losses, dtype=np.float64)
    noisy = np.asarray(flip_mask, dtype=bool)
    n_noisy = int(noisy.sum())
    n_clean = int(noisy.size - n_noisy)
    if n_noisy == 0 or n_clean == 0:
        raise DiagnosticError("separation AUC needs both clean and noisy samples")
    ranks = stats.rankdata(losses)
    wins = ranks[noisy].sum() - n_noisy * (n_noisy + 1) / 2.0
    return float(wins / (n_noisy * n_clean))


def loss_histogram(
    normalized: np.ndarray, flip_mask: np.ndarray, bins: int = 20
) -> List[HistogramBin]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    values = np.asarray(normalized, dtype=np.float64)
    noisy = np.asarray(flip_mask, dtype=bool)
    clean_counts, _ = np.histogram(values[~noisy], bins=edges)
    noisy_counts, _ = np.histogram(values[noisy], bins=edges)
    return [
        HistogramBin(bin_left=float(edges[i]), clean_count=int(c), noisy_count=int(n))
        for i, (c, n) in enumerate(zip(clean_counts, noisy_counts))
    ]
