"""Logistic regression likelihood and Newton fitting.

Two entry points share the same objective and stopping rules:

- ``fit_mle`` / ``fit_penalized`` fit a single model on its own columns and
  serve as the reference path;
- ``fit_many`` fits a whole family of models at once on a padded
  ``(n_models, p + 1)`` coefficient array, with excluded coefficients pinned
  at zero. The streaming engine runs on this path.

The penalized objective is

    psi(beta) = loglik(beta) - 0.5 (beta - center)' P (beta - center)

and reduces to the plain log-likelihood when ``P = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .space import ModelIndicator

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
STEP_TOL = 1e-10
MAX_HALVINGS = 30
SINGULAR_RATIO = 1e-12
RIDGE = 1e-8
# a small gradient only counts as convergence if the Newton step is small too
# and the information was not ridged; under separation the gradient decays
# like e^{-beta} while the step stays near 1 until the fit saturates
SEPARATION_STEP = 1e-3


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Batch:
    """``n`` observations; column 0 of ``x`` is the intercept."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionError(f"x {x.shape} and y {y.shape} do not describe n observations")
        if x.shape[0] < 1:
            raise DimensionError("a batch needs at least one observation")
        if not np.all(x[:, 0] == 1.0):
            raise ValueError("first column of x must be the all-ones intercept")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("responses must be 0 or 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1] - 1

    @staticmethod
    def concat(batches) -> "Batch":
        batches = list(batches)
        return Batch(np.vstack([b.x for b in batches]), np.concatenate([b.y for b in batches]))


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    loglik: float
    observed_info: np.ndarray
    converged: bool
    iterations: int
    ridged: bool = False


def model_columns(batch: Batch, model: ModelIndicator) -> Batch:
    """Restrict a batch to the intercept plus the model's predictors."""
    if batch.p != model.p:
        raise DimensionError(f"batch has p={batch.p} predictors, model expects p={model.p}")
    return Batch(batch.x[:, model.columns], batch.y)


def _log1pexp(eta):
    # log(1 + e^eta); logaddexp branches on sign internally so it never overflows
    return np.logaddexp(0.0, eta)


def loglik(beta, x, y) -> float:
    eta = x @ beta
    return float(np.sum(y * eta - _log1pexp(eta)))


def loglik_grad_hess(beta, batch: Batch):
    """Bernoulli log-likelihood, gradient ``X'(y - mu)`` and Hessian ``-X'WX``."""
    beta = np.asarray(beta, dtype=np.float64)
    x, y = batch.x, batch.y
    if beta.shape != (x.shape[1],):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({x.shape[1]},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta contains non-finite values")
    eta = x @ beta
    mu = expit(eta)
    ll = float(np.sum(y * eta - _log1pexp(eta)))
    grad = x.T @ (y - mu)
    w = mu * (1.0 - mu)
    hess = -(x.T * w) @ x
    return ll, grad, hess


def _newton_direction(neg_hess, grad):
    """Solve ``neg_hess @ step = grad``; ridge the system if it is near singular."""
    eig = np.linalg.eigvalsh(neg_hess)
    ridged = bool(eig[0] < SINGULAR_RATIO * max(eig[-1], 0.0) or eig[-1] <= 0.0)
    if ridged:
        neg_hess = neg_hess + RIDGE * np.eye(len(grad))
    try:
        step = cho_solve(cho_factor(neg_hess), grad)
    except LinAlgError:
        step = np.linalg.lstsq(neg_hess, grad, rcond=None)[0]
        ridged = True
    return step, ridged


def _accept(new, old):
    # non-decrease up to rounding of the objective itself
    return new >= old - 1e-12 * (1.0 + abs(old))


def fit_penalized(batch: Batch, center=None, info_prior=None, init=None,
                  tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """Maximize ``psi`` by Newton-Raphson with step halving.

    ``FitResult.loglik`` and ``observed_info`` refer to the batch term only,
    evaluated at the returned estimate.
    """
    d = batch.x.shape[1]
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    if beta.shape != (d,):
        raise DimensionError(f"init has shape {beta.shape}, expected ({d},)")
    if info_prior is None:
        info_prior = np.zeros((d, d))
        center = np.zeros(d)
    info_prior = np.asarray(info_prior, dtype=np.float64)
    center = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
    if info_prior.shape != (d, d) or center.shape != (d,):
        raise DimensionError("penalty dimensions do not match the design")

    def objective(b):
        ll, g, h = loglik_grad_hess(b, batch)
        r = b - center
        return ll - 0.5 * r @ info_prior @ r, g - info_prior @ r, h - info_prior

    obj, grad, hess = objective(beta)
    converged = False
    ridged = False
    it = 0
    while True:
        step, was_ridged = _newton_direction(-hess, grad)
        if not was_ridged and np.max(np.abs(grad)) < tol and np.max(np.abs(step)) < SEPARATION_STEP:
            beta = beta + step  # one last Newton step squares the remaining error
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        ridged |= was_ridged
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + t * step
            cand_obj = objective(cand)
            if _accept(cand_obj[0], obj):
                break
            t *= 0.5
        beta_change = np.max(np.abs(cand - beta))
        beta = cand
        obj, grad, hess = cand_obj
        if beta_change < STEP_TOL:
            converged = not was_ridged
            break

    ll, _, h = loglik_grad_hess(beta, batch)
    return FitResult(beta, ll, -h, converged, it, ridged)


def fit_mle(batch: Batch, init=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    return fit_penalized(batch, init=init, tol=tol, max_iter=max_iter)


# --- many models at once ----------------------------------------------------


class DesignCache:
    """Per-row products of one design, reused by every Newton iteration."""

    def __init__(self, x: np.ndarray):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        d = self.x.shape[1]
        iu = np.triu_indices(d)
        # row i holds the upper triangle of x_i x_i'
        self.outer = np.ascontiguousarray(self.x[:, iu[0]] * self.x[:, iu[1]])
        self.tri = np.zeros((d, d), dtype=np.intp)
        self.tri[iu] = np.arange(len(iu[0]))
        self.tri[iu[1], iu[0]] = np.arange(len(iu[0]))

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def pair_index(self, cols: np.ndarray) -> np.ndarray:
        """Flat upper-triangle positions of each model's (k, k) block."""
        g, k = cols.shape
        return self.tri[cols[:, :, None], cols[:, None, :]].reshape(g, k * k)

    def info(self, w: np.ndarray, pairs: np.ndarray) -> np.ndarray:
        """``X_g' diag(w[:, g]) X_g`` for each model g, compact (g, k, k)."""
        flat = w.T @ self.outer
        g = pairs.shape[0]
        k = int(round(pairs.shape[1] ** 0.5))
        return np.take_along_axis(flat, pairs, axis=1).reshape(g, k, k)


def _batched_cholesky_solve(a, b):
    """Solve ``a[i] x[i] = b[i]`` for a stack of SPD matrices.

    Matrices whose smallest eigenvalue is below ``SINGULAR_RATIO`` times the
    largest get ``RIDGE`` added to the diagonal first. The eigenvalue test
    only runs where a Cholesky pivot is small relative to the diagonal or the
    factorization fails, since well-conditioned systems never need it.
    """
    g, k = b.shape
    ridged = np.zeros(g, dtype=bool)
    try:
        chol = np.linalg.cholesky(a)
        piv = np.einsum("gii->gi", chol) ** 2
        diag = np.einsum("gii->gi", a)
        suspect = piv.min(axis=1) < 1e-4 * diag.max(axis=1)
    except np.linalg.LinAlgError:
        chol = None
        suspect = np.ones(g, dtype=bool)
    if suspect.any():
        sub = np.flatnonzero(suspect)
        eig = np.linalg.eigvalsh(a[sub])
        bad = (eig[:, 0] < SINGULAR_RATIO * np.maximum(eig[:, -1], 0.0)) | (eig[:, -1] <= 0.0)
        if bad.any() or chol is None:
            a = a.copy()
            a[sub[bad]] += RIDGE * np.eye(k)
            ridged[sub[bad]] = True
            try:
                chol = np.linalg.cholesky(a)
            except np.linalg.LinAlgError:
                x = np.stack([np.linalg.lstsq(a[i], b[i], rcond=None)[0] for i in range(g)])
                return x, np.ones(g, dtype=bool) | ridged
    z = np.empty_like(b)
    for i in range(k):
        z[:, i] = (b[:, i] - np.einsum("gj,gj->g", chol[:, i, :i], z[:, :i])) / chol[:, i, i]
    x = np.empty_like(b)
    for i in range(k - 1, -1, -1):
        x[:, i] = (z[:, i] - np.einsum("gj,gj->g", chol[:, i + 1 :, i], x[:, i + 1 :])) / chol[:, i, i]
    return x, ridged


class _Group:
    """Models of one size, fitted together on compact (g, k) coefficients."""

    def __init__(self, xc: DesignCache, y, cols, center, penalty):
        self.xc, self.y, self.cols = xc, y, cols
        self.pairs = xc.pair_index(cols)
        self.center, self.penalty = center, penalty

    def _pad(self, beta, rows):
        full = np.zeros((beta.shape[0], self.xc.d))
        np.put_along_axis(full, self.cols[rows], beta, axis=1)
        return full

    def evaluate(self, beta, rows):
        """Objective, batch log-likelihood, gradient, negative Hessian and
        batch information at ``beta`` for the models at ``rows``."""
        eta = self.xc.x @ self._pad(beta, rows).T  # (n, g)
        ll, resid, w = _bernoulli_terms(eta, self.y)
        grad = np.take_along_axis((self.xc.x.T @ resid).T, self.cols[rows], axis=1)
        info = self.xc.info(w, self.pairs[rows])
        if self.penalty is None:
            return ll, ll, grad, info, info
        r = beta - self.center[rows]
        pr = np.einsum("gij,gj->gi", self.penalty[rows], r)
        obj = ll - 0.5 * np.einsum("gi,gi->g", r, pr)
        return obj, ll, grad - pr, info + self.penalty[rows], info


def _bernoulli_terms(eta, y):
    """Column log-likelihoods, residuals ``y - mu`` and weights ``mu (1 - mu)``."""
    pos = eta > 0
    e = np.abs(eta)
    np.negative(e, out=e)
    np.exp(e, out=e)  # e^{-|eta|}, never overflows
    tmp = np.log1p(e)
    ll = y @ eta - tmp.sum(axis=0) - np.maximum(eta, 0.0, out=tmp).sum(axis=0)
    inv = np.add(e, 1.0, out=tmp)
    np.reciprocal(inv, out=inv)
    e *= inv  # now sigmoid(-|eta|)
    mu = np.where(pos, inv, e)
    w = np.multiply(e, inv, out=e)
    np.subtract(y[:, None], mu, out=mu)
    return ll, mu, w


def _take(ev, sel):
    return tuple(part[sel] for part in ev)


def _put(ev, sel, new):
    for part, val in zip(ev, new):
        part[sel] = val


def _fit_group(grp: _Group, beta, tol, max_iter):
    g = beta.shape[0]
    iters = np.zeros(g, dtype=np.int64)
    converged = np.zeros(g, dtype=bool)
    ridged = np.zeros(g, dtype=bool)
    ll_out = np.empty(g)
    info_out = np.empty((g,) + (beta.shape[1],) * 2)

    active = np.arange(g)
    ev = grp.evaluate(beta, active)
    ll_out[:] = ev[1]
    info_out[:] = ev[4]
    while True:
        step, was_ridged = _batched_cholesky_solve(ev[3], ev[2])
        done = ~was_ridged & (np.max(np.abs(ev[2]), axis=1) < tol) & (np.max(np.abs(step), axis=1) < SEPARATION_STEP)
        if done.any():
            sel = active[done]
            beta[sel] += step[done]
            final = grp.evaluate(beta[sel], sel)
            ll_out[sel] = final[1]
            info_out[sel] = final[4]
            converged[sel] = True
        keep = ~done & (iters[active] < max_iter)
        active, ev = active[keep], _take(ev, keep)
        step, was_ridged = step[keep], was_ridged[keep]
        if active.size == 0:
            break
        iters[active] += 1
        ridged[active] |= was_ridged
        cur = beta[active]
        cand = cur + step
        new = grp.evaluate(cand, active)
        t = np.ones(active.size)
        bad = ~_accept(new[0], ev[0])
        for _ in range(MAX_HALVINGS):
            if not bad.any():
                break
            sub = np.flatnonzero(bad)
            t[sub] *= 0.5
            cand[sub] = cur[sub] + t[sub, None] * step[sub]
            _put(new, sub, grp.evaluate(cand[sub], active[sub]))
            bad[sub] = ~_accept(new[0][sub], ev[0][sub])

        beta[active] = cand
        ev = new
        ll_out[active] = ev[1]
        info_out[active] = ev[4]
        small = np.max(np.abs(cand - cur), axis=1) < STEP_TOL
        converged[active[small & ~was_ridged]] = True
        active, ev = active[~small], _take(ev, ~small)
        if active.size == 0:
            break
    return beta, ll_out, info_out, converged, iters, ridged


def fit_many(x, y, masks, init=None, center=None, info_prior=None,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, design: DesignCache | None = None):
    """Fit every model in ``masks`` on the same data.

    ``masks`` is an (m, d) boolean array of included columns (intercept
    included). Inputs and outputs use padded (m, d) coefficients and
    (m, d, d) information matrices that are zero outside each model's
    columns. Models are grouped by size and fitted on compact arrays; the
    stopping, step-halving and ridging rules match ``fit_penalized``.

    Returns ``(beta, loglik, observed_info, converged, iterations, ridged)``
    with ``loglik`` and ``observed_info`` for the data term alone, at the
    returned estimate.
    """
    xc = design if design is not None else DesignCache(x)
    y = np.asarray(y, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    m, d = masks.shape
    if d != xc.d:
        raise DimensionError(f"masks have {d} columns, design has {xc.d}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    beta_out = np.zeros((m, d))
    ll_out = np.empty(m)
    info_out = np.zeros((m, d, d))
    converged = np.zeros(m, dtype=bool)
    iters = np.zeros(m, dtype=np.int64)
    ridged = np.zeros(m, dtype=bool)

    sizes = masks.sum(axis=1)
    for k in np.unique(sizes):
        idx = np.flatnonzero(sizes == k)
        cols = np.nonzero(masks[idx])[1].reshape(idx.size, k)
        rows = idx[:, None]
        beta = np.zeros((idx.size, k)) if init is None else np.asarray(init, dtype=np.float64)[rows, cols]
        if info_prior is None:
            c = pen = None
        else:
            c = np.asarray(center, dtype=np.float64)[rows, cols]
            pen = np.asarray(info_prior, dtype=np.float64)[idx[:, None, None], cols[:, :, None], cols[:, None, :]]
        grp = _Group(xc, y, cols, c, pen)
        b, ll, info, conv, it, rid = _fit_group(grp, beta, tol, max_iter)
        beta_out[rows, cols] = b
        info_out[idx[:, None, None], cols[:, :, None], cols[:, None, :]] = info
        ll_out[idx] = ll
        converged[idx] = conv
        iters[idx] = it
        ridged[idx] = rid
    return beta_out, ll_out, info_out, converged, iters, ridged
