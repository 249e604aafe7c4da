"""Per-model streaming state under the Offline and Online updating schemes.

Offline refits each model on the cumulative data at every batch. Online keeps
only a quadratic surrogate of the past log-likelihood: the previous estimate
``beta_{b-1}`` and accumulated observed information ``J_{b-1}``. At batch
``b`` it maximizes

    l_b(beta) - 0.5 (beta - beta_{b-1})' J_{b-1} (beta - beta_{b-1})

then sets ``J_b = J_{b-1} + I_b(beta_b)`` and carries the surrogate
cumulative log-likelihood

    c_b = c_{b-1} - 0.5 (beta_b - beta_{b-1})' J_{b-1} (beta_b - beta_{b-1}) + l_b(beta_b).

Both schemes feed the BIC approximation
``log m(D | gamma) ~ loglik - (k + 1) / 2 * log N``.

``ModelFitState`` and its update functions handle one model and are the
reference; ``SpaceState`` advances all 2^p models together through
``fit_many``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .logistic import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Batch,
    DesignCache,
    DimensionError,
    fit_many,
    fit_mle,
    fit_penalized,
    model_columns,
)
from .space import ModelIndicator, design_masks


class MethodKind(str, Enum):
    OFFLINE = "Offline"
    ONLINE = "Online"


@dataclass(frozen=True)
class ModelFitState:
    model: ModelIndicator
    beta_hat: np.ndarray
    info_accum: np.ndarray
    loglik_proxy: float
    n_seen: int
    converged_all: bool = True


def init_state(model: ModelIndicator, first_batch: Batch, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> ModelFitState:
    """Plain MLE on the first batch; identical for both methods."""
    fit = fit_mle(model_columns(first_batch, model), tol=tol, max_iter=max_iter)
    return ModelFitState(model, fit.beta_hat, fit.observed_info, fit.loglik, first_batch.n, fit.converged)


def offline_update(state: ModelFitState, cumulative_data: Batch, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> ModelFitState:
    if cumulative_data.n <= state.n_seen:
        raise ValueError(f"cumulative data has {cumulative_data.n} rows, state has already seen {state.n_seen}")
    fit = fit_mle(model_columns(cumulative_data, state.model), init=state.beta_hat, tol=tol, max_iter=max_iter)
    return replace(
        state,
        beta_hat=fit.beta_hat,
        info_accum=fit.observed_info,
        loglik_proxy=fit.loglik,
        n_seen=cumulative_data.n,
        converged_all=state.converged_all and fit.converged,
    )


def online_update(state: ModelFitState, new_batch: Batch, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> ModelFitState:
    view = model_columns(new_batch, state.model)
    prev_beta, prev_info = state.beta_hat, state.info_accum
    if prev_beta.shape[0] != view.x.shape[1]:
        raise DimensionError("state and batch disagree on the model's dimension")
    fit = fit_penalized(view, center=prev_beta, info_prior=prev_info, init=prev_beta, tol=tol, max_iter=max_iter)
    delta = fit.beta_hat - prev_beta
    proxy = state.loglik_proxy - 0.5 * delta @ prev_info @ delta + fit.loglik
    return replace(
        state,
        beta_hat=fit.beta_hat,
        info_accum=prev_info + fit.observed_info,
        loglik_proxy=proxy,
        n_seen=state.n_seen + new_batch.n,
        converged_all=state.converged_all and fit.converged,
    )


def log_marginal_bic(state: ModelFitState) -> float:
    if state.n_seen <= 0:
        raise ValueError("BIC needs at least one observation")
    return state.loglik_proxy - 0.5 * (state.model.size + 1) * math.log(state.n_seen)


# --- whole model space ------------------------------------------------------


@dataclass
class SpaceState:
    """Streaming state of every model, stacked in ascending bit-mask order.

    ``beta`` is padded to (2^p, p + 1) and ``info`` to (2^p, p + 1, p + 1),
    with zeros outside each model's columns. ``nonconverged_fits`` counts
    individual (model, batch) fits that hit the iteration limit.
    """

    masks: np.ndarray
    beta: np.ndarray
    info: np.ndarray
    loglik: np.ndarray
    n_seen: int
    converged_all: np.ndarray
    nonconverged_fits: int = 0
    batches: int = 1

    @property
    def p(self) -> int:
        return self.masks.shape[1] - 1

    def model_state(self, bits: int) -> ModelFitState:
        cols = self.masks[bits]
        return ModelFitState(
            ModelIndicator(bits, self.p),
            self.beta[bits, cols].copy(),
            self.info[bits][np.ix_(cols, cols)].copy(),
            float(self.loglik[bits]),
            self.n_seen,
            bool(self.converged_all[bits]),
        )


def init_space(first_batch: Batch, masks=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> SpaceState:
    masks = design_masks(first_batch.p) if masks is None else np.asarray(masks, dtype=bool)
    beta, ll, info, conv, _, _ = fit_many(first_batch.x, first_batch.y, masks, tol=tol, max_iter=max_iter)
    return SpaceState(masks, beta, info, ll, first_batch.n, conv.copy(), int((~conv).sum()))


def offline_space_update(state: SpaceState, cumulative_data: Batch, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> SpaceState:
    if cumulative_data.n <= state.n_seen:
        raise ValueError(f"cumulative data has {cumulative_data.n} rows, state has already seen {state.n_seen}")
    beta, ll, info, conv, _, _ = fit_many(
        cumulative_data.x, cumulative_data.y, state.masks, init=state.beta, tol=tol, max_iter=max_iter,
        design=DesignCache(cumulative_data.x),
    )
    return SpaceState(
        state.masks, beta, info, ll, cumulative_data.n, state.converged_all & conv,
        state.nonconverged_fits + int((~conv).sum()), state.batches + 1,
    )


def online_space_update(state: SpaceState, new_batch: Batch, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> SpaceState:
    if new_batch.p != state.p:
        raise DimensionError(f"batch has p={new_batch.p}, state has p={state.p}")
    beta, ll, batch_info, conv, _, _ = fit_many(
        new_batch.x, new_batch.y, state.masks, init=state.beta, center=state.beta, info_prior=state.info,
        tol=tol, max_iter=max_iter,
    )
    delta = beta - state.beta
    shrink = 0.5 * np.einsum("mi,mij,mj->m", delta, state.info, delta)
    return SpaceState(
        state.masks, beta, state.info + batch_info, state.loglik - shrink + ll, state.n_seen + new_batch.n,
        state.converged_all & conv, state.nonconverged_fits + int((~conv).sum()), state.batches + 1,
    )


def log_marginals_bic(state: SpaceState) -> np.ndarray:
    """BIC log marginal likelihood of every model, ascending bit-mask order."""
    if state.n_seen <= 0:
        raise ValueError("BIC needs at least one observation")
    dims = state.masks.sum(axis=1)
    return state.loglik - 0.5 * dims * math.log(state.n_seen)
