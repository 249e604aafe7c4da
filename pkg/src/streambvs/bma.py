"""Posterior model probabilities, inclusion probabilities and BMA estimates.

All per-model sequences are indexed by bit mask (model ``m`` at position
``m``). Reductions over the model space use numpy's sequential ufunc
reductions, never threaded BLAS, so results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .priors import PriorTable
from .space import inclusion_matrix


@dataclass(frozen=True)
class PosteriorSummary:
    log_post: np.ndarray
    pip: np.ndarray
    beta_bma: np.ndarray
    prior_id: str = ""
    method_id: str = ""
    batch_index: int = 0


def _normalize_log(v: np.ndarray) -> np.ndarray:
    # shift by the max first so large offsets never round into the result
    top = np.max(v)
    if not np.isfinite(top):
        raise ValueError("cannot normalize: every model has zero or non-finite weight")
    shifted = v - top
    return shifted - np.log(np.sum(np.exp(shifted)))


def posterior_model_probs(log_marginals, prior: PriorTable | np.ndarray) -> np.ndarray:
    """Normalized log posterior over models: prior times marginal likelihood.

    ``prior`` is a PriorTable or an explicit per-model log prior sequence.
    """
    log_marginals = np.asarray(log_marginals, dtype=np.float64)
    log_prior = prior.log_prior_models() if isinstance(prior, PriorTable) else np.asarray(prior, dtype=np.float64)
    if log_marginals.shape != log_prior.shape:
        raise ValueError(f"{log_marginals.shape[0]} marginals for {log_prior.shape[0]} prior entries")
    if np.any(np.isnan(log_marginals)) or np.any(log_marginals == np.inf):
        raise ValueError("log marginals must be finite or -inf")
    joint = log_prior + log_marginals
    return _normalize_log(joint)


def inclusion_probabilities(log_post, p: int) -> np.ndarray:
    log_post = np.asarray(log_post, dtype=np.float64)
    if log_post.shape != (1 << p,):
        raise ValueError(f"expected {1 << p} model probabilities, got {log_post.shape}")
    post = np.exp(log_post)
    return (post[:, None] * inclusion_matrix(p)).sum(axis=0)


def _padded_fits(fits, p: int, masks: np.ndarray) -> np.ndarray:
    if isinstance(fits, np.ndarray) and fits.shape == (1 << p, p + 1):
        return fits
    fits = list(fits)
    if len(fits) != 1 << p:
        raise ValueError(f"expected {1 << p} fits, got {len(fits)}")
    out = np.full((1 << p, p + 1), np.nan)
    for m, coef in enumerate(fits):
        if coef is None:
            continue
        coef = np.asarray(coef, dtype=np.float64)
        cols = masks[m]
        if coef.shape == (cols.sum(),):
            out[m] = 0.0
            out[m, cols] = coef
        elif coef.shape == (p + 1,):
            out[m] = np.where(cols, coef, 0.0)
        else:
            raise ValueError(f"fit for model {m} has shape {coef.shape}")
    return out


def bma_coefficients(log_post, fits, p: int) -> np.ndarray:
    """Posterior-weighted average of per-model coefficients.

    ``fits`` is either a padded (2^p, p + 1) array or a sequence with one
    compact coefficient vector (intercept first) per model; ``None`` marks a
    missing fit. Excluded coefficients count as zero; the intercept is
    averaged over every model.
    """
    post = np.exp(np.asarray(log_post, dtype=np.float64))
    masks = np.hstack([np.ones((1 << p, 1), dtype=bool), inclusion_matrix(p).astype(bool)])
    coef = _padded_fits(fits, p, masks)
    missing = np.isnan(coef).any(axis=1)
    if np.any(missing & (post > 0)):
        raise ValueError(f"missing fit for model {int(np.flatnonzero(missing & (post > 0))[0])} with posterior mass")
    coef = np.where(missing[:, None] | ~masks, 0.0, coef)
    return (post[:, None] * coef).sum(axis=0)


def summarize(log_marginals, prior: PriorTable, betas, prior_id="", method_id="", batch_index=0) -> PosteriorSummary:
    log_post = posterior_model_probs(log_marginals, prior)
    return PosteriorSummary(
        log_post=log_post,
        pip=inclusion_probabilities(log_post, prior.p),
        beta_bma=bma_coefficients(log_post, betas, prior.p),
        prior_id=prior_id or prior.spec.label,
        method_id=method_id,
        batch_index=batch_index,
    )
