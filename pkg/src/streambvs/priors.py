"""Model-space priors over the 2^p inclusion-indicator vectors.

Every prior handled here is exchangeable, so it is fully described by the
log probability ``log_q[k]`` of one specific model of size ``k``; the induced
model-size distribution is ``log_q[k] + log C(p, k)``. All arithmetic stays in
log space.

Supported variants:

- discrete uniform, ``p(gamma) = 2^-p``
- Beta-Binomial(a, b), inclusion probability integrated out
- matryoshka doll (MD) with nesting odds ``xi = 1 / (e^theta - 1)``, by
  backward recursion
- truncated Poisson(theta) approximation to MD
- independent Bernoulli(theta / p) approximation to MD
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .space import model_sizes

__all__ = [
    "InvalidParameterError",
    "PriorKind",
    "PriorSpec",
    "PriorTable",
    "PAPER_LABELS",
    "xi_from_theta",
    "log_binom_row",
    "log_prior_by_size",
    "md_size_weights",
    "build_prior_table",
    "limiting_size_pmf",
    "size_ratio",
    "beta_one_b_ratio_limit",
    "comparison_priors",
    "resolve_prior",
]


class InvalidParameterError(ValueError):
    """A prior hyperparameter or size index is outside its domain."""


class PriorKind(str, Enum):
    DISCRETE_UNIFORM = "DiscreteUniform"
    BETA_BINOMIAL = "BetaBinomial"
    MATRYOSHKA_DOLL = "MatryoshkaDoll"
    TRUNCATED_POISSON_MD = "TruncatedPoissonMD"
    BERNOULLI_MD = "BernoulliMD"


_THETA_KINDS = (PriorKind.MATRYOSHKA_DOLL, PriorKind.TRUNCATED_POISSON_MD, PriorKind.BERNOULLI_MD)


def _check_positive(name, value):
    if value is None:
        raise InvalidParameterError(f"{name} is required")
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value}")
    return value


@dataclass(frozen=True)
class PriorSpec:
    """One model-space prior and its hyperparameters.

    Only the hyperparameters of the active variant may be set: ``a`` and ``b``
    for Beta-Binomial, ``theta`` for the MD family. ``label`` is a display
    name used in output files.
    """

    kind: PriorKind
    a: float | None = None
    b: float | None = None
    theta: float | None = None
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        kind = PriorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PriorKind.BETA_BINOMIAL:
            object.__setattr__(self, "a", _check_positive("a", self.a))
            object.__setattr__(self, "b", _check_positive("b", self.b))
            if self.theta is not None:
                raise InvalidParameterError("theta is not used by BetaBinomial")
        elif kind in _THETA_KINDS:
            object.__setattr__(self, "theta", _check_positive("theta", self.theta))
            if self.a is not None or self.b is not None:
                raise InvalidParameterError(f"a/b are not used by {kind.value}")
        elif any(v is not None for v in (self.a, self.b, self.theta)):
            raise InvalidParameterError("DiscreteUniform takes no hyperparameters")
        if self.label is None:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self):
        if self.kind is PriorKind.DISCRETE_UNIFORM:
            return "DU"
        if self.kind is PriorKind.BETA_BINOMIAL:
            return f"BB({self.a:g},{self.b:g})"
        short = {
            PriorKind.MATRYOSHKA_DOLL: "MD",
            PriorKind.TRUNCATED_POISSON_MD: "PA",
            PriorKind.BERNOULLI_MD: "BA",
        }[self.kind]
        return short if self.theta == 1.0 else f"{short}({self.theta:g})"

    @classmethod
    def discrete_uniform(cls, label=None):
        return cls(PriorKind.DISCRETE_UNIFORM, label=label)

    @classmethod
    def beta_binomial(cls, a, b, label=None):
        return cls(PriorKind.BETA_BINOMIAL, a=a, b=b, label=label)

    @classmethod
    def matryoshka(cls, theta=1.0, label=None):
        return cls(PriorKind.MATRYOSHKA_DOLL, theta=theta, label=label)

    @classmethod
    def truncated_poisson(cls, theta=1.0, label=None):
        return cls(PriorKind.TRUNCATED_POISSON_MD, theta=theta, label=label)

    @classmethod
    def bernoulli_md(cls, theta=1.0, label=None):
        return cls(PriorKind.BERNOULLI_MD, theta=theta, label=label)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "label": self.label}
        for name in ("a", "b", "theta"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out


@dataclass(frozen=True)
class PriorTable:
    """Per-size log prior for a fixed (spec, p).

    ``log_q[k]`` is the log probability of a single model of size ``k`` and
    ``log_size_pmf[k] = log_q[k] + log C(p, k)``.
    """

    spec: PriorSpec
    p: int
    log_q: np.ndarray
    log_size_pmf: np.ndarray

    def log_prior_models(self) -> np.ndarray:
        """Log prior of every model in ascending bit-mask order."""
        return self.log_q[model_sizes(self.p)]

    @property
    def size_pmf(self) -> np.ndarray:
        return np.exp(self.log_size_pmf)


def xi_from_theta(theta: float) -> float:
    """Nesting odds ``xi`` solving ``theta = log(1 + 1/xi)``."""
    theta = float(theta)
    if not math.isfinite(theta) or theta <= 0:
        raise InvalidParameterError(f"theta must be positive and finite, got {theta}")
    return 1.0 / math.expm1(theta)


@lru_cache(maxsize=64)
def _log_binom_row_cached(p: int) -> np.ndarray:
    # cumulative sum of log((p - k) / (k + 1)) keeps consecutive differences
    # exact to a few ulps, which size ratios depend on
    half = p // 2
    k = np.arange(half, dtype=np.float64)
    inc = np.log((p - k) / (k + 1.0))
    row = np.empty(p + 1)
    row[0] = 0.0
    row[1 : half + 1] = np.cumsum(inc)
    row[p - half :] = row[half::-1]
    row.setflags(write=False)
    return row


def log_binom_row(p: int) -> np.ndarray:
    """``log C(p, k)`` for ``k = 0..p``, symmetric by construction."""
    if p < 0:
        raise InvalidParameterError(f"p must be non-negative, got {p}")
    return _log_binom_row_cached(int(p))


@lru_cache(maxsize=64)
def _md_log_q(theta: float, p: int) -> np.ndarray:
    log_xi = math.log(xi_from_theta(theta))
    lgam = gammaln(np.arange(p + 2, dtype=np.float64))
    u = np.empty(p + 1)
    u[p] = 0.0
    for k in range(p - 1, -1, -1):
        m = p - k
        j = np.arange(1, m + 1)
        log_c = lgam[m + 1] - lgam[j + 1] - lgam[m - j + 1]
        u[k] = log_xi + logsumexp(log_c + u[k + 1 :])
    log_q = u - logsumexp(u + log_binom_row(p))
    log_q.setflags(write=False)
    return log_q


def md_size_weights(theta: float, p: int) -> np.ndarray:
    """Log probability of one MD model of each size ``k = 0..p``.

    Each model's prior odds against the union of its strict supersets are held
    at ``xi``. With equal mass inside a size class this gives, for ``k < p``,

        q_k = xi * sum_{j=1}^{p-k} C(p-k, j) q_{k+j},

    solved backward from ``q_p = 1`` and then normalized over all 2^p models.
    Cost is O(p^2); results are cached.
    """
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    return _md_log_q(float(theta), int(p))


def _check_size(p, k):
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    if not 0 <= k <= p:
        raise InvalidParameterError(f"model size k={k} outside 0..{p}")


def _log_q_vector(spec: PriorSpec, p: int) -> np.ndarray:
    k = np.arange(p + 1, dtype=np.float64)
    kind = spec.kind
    if kind is PriorKind.DISCRETE_UNIFORM:
        return np.full(p + 1, -p * math.log(2.0))
    if kind is PriorKind.BETA_BINOMIAL:
        return betaln(spec.a + k, spec.b + p - k) - betaln(spec.a, spec.b)
    if kind is PriorKind.BERNOULLI_MD:
        if spec.theta >= p:
            raise InvalidParameterError(
                f"BernoulliMD needs theta < p so that theta/p is a probability (theta={spec.theta}, p={p})"
            )
        w = spec.theta / p
        return k * math.log(w) + (p - k) * math.log1p(-w)
    if kind is PriorKind.TRUNCATED_POISSON_MD:
        log_w = k * math.log(spec.theta) - gammaln(k + 1.0)
        return log_w - logsumexp(log_w) - log_binom_row(p)
    if kind is PriorKind.MATRYOSHKA_DOLL:
        return np.array(md_size_weights(spec.theta, p))
    raise InvalidParameterError(f"unknown prior kind {kind!r}")


def log_prior_by_size(spec: PriorSpec, p: int, k: int) -> float:
    """Log prior probability of one specific model of size ``k``."""
    _check_size(p, k)
    return float(_log_q_vector(spec, p)[k])


@lru_cache(maxsize=256)
def _table_arrays(spec: PriorSpec, p: int):
    log_q = _log_q_vector(spec, p)
    log_size = log_q + log_binom_row(p)
    log_q.setflags(write=False)
    log_size.setflags(write=False)
    return log_q, log_size


def build_prior_table(spec: PriorSpec, p: int) -> PriorTable:
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    log_q, log_size = _table_arrays(spec, int(p))
    return PriorTable(spec=spec, p=int(p), log_q=log_q, log_size_pmf=log_size)


def limiting_size_pmf(theta: float, k: int) -> float:
    """Poisson(theta) probability of size ``k``: the large-p limit for MD."""
    if not math.isfinite(theta) or theta <= 0:
        raise InvalidParameterError(f"theta must be positive and finite, got {theta}")
    if k < 0:
        raise InvalidParameterError(f"k must be non-negative, got {k}")
    return math.exp(-theta + k * math.log(theta) - math.lgamma(k + 1))


def size_ratio(spec: PriorSpec, p: int, k: int) -> float:
    """Exact ``P(size = k + 1) / P(size = k)`` at finite ``p``."""
    if not 0 <= k < p:
        raise InvalidParameterError(f"size ratio needs 0 <= k < p, got k={k}, p={p}")
    table = build_prior_table(spec, p)
    if not np.isfinite(table.log_size_pmf[k]):
        raise InvalidParameterError(f"size pmf is zero at k={k}")
    return math.exp(table.log_size_pmf[k + 1] - table.log_size_pmf[k])


def beta_one_b_ratio_limit(rule: str, p: int, m: float | None = None, v: float | None = None) -> float:
    """Large-p behaviour of the Beta(1, b) size ratio.

    ``rule`` is ``"fixed"`` (limit 1), ``"mp"`` with ``b = m p`` (limit
    ``1/(m+1)``) or ``"pv"`` with ``b = p^v``, ``v > 1`` (ratio decays like
    ``p^(1-v)``, returned at the given ``p``).
    """
    if rule == "fixed":
        return 1.0
    if rule == "mp":
        return 1.0 / (_check_positive("m", m) + 1.0)
    if rule == "pv":
        v = _check_positive("v", v)
        if v <= 1:
            raise InvalidParameterError("b = p^v case needs v > 1")
        return float(p) ** (1.0 - v)
    raise InvalidParameterError(f"unknown rule {rule!r}")


PAPER_LABELS = ("DU", "B11", "B1p", "MD", "PA", "BA", "B1psq")


def comparison_priors(p: int, theta: float = 1.0) -> list[PriorSpec]:
    """The seven priors in comparison order, weakest to strongest sparsity."""
    return [resolve_prior(label, p, theta=theta) for label in PAPER_LABELS]


def resolve_prior(entry, p: int, theta: float = 1.0) -> PriorSpec:
    """Build a PriorSpec from a short label (``"B1p"``) or a dict.

    Labels may be given in any case. Dicts carry ``kind`` plus hyperparameters
    and an optional ``label``; ``b`` may be the strings ``"p"`` or ``"p^2"``.
    """
    if isinstance(entry, PriorSpec):
        return entry
    if isinstance(entry, str):
        key = entry.strip().lower()
        table = {
            "du": lambda: PriorSpec.discrete_uniform(label="DU"),
            "b11": lambda: PriorSpec.beta_binomial(1, 1, label="B11"),
            "b1p": lambda: PriorSpec.beta_binomial(1, p, label="B1p"),
            "b1psq": lambda: PriorSpec.beta_binomial(1, p * p, label="B1psq"),
            "md": lambda: PriorSpec.matryoshka(theta, label="MD"),
            "pa": lambda: PriorSpec.truncated_poisson(theta, label="PA"),
            "ba": lambda: PriorSpec.bernoulli_md(theta, label="BA"),
        }
        if key not in table:
            raise InvalidParameterError(f"unknown prior label {entry!r}")
        return table[key]()
    if isinstance(entry, dict):
        params = dict(entry)
        kind = params.pop("kind", None)
        if kind is None:
            raise InvalidParameterError(f"prior entry {entry!r} has no 'kind'")
        b = params.get("b")
        if isinstance(b, str):
            b_rules = {"p": p, "p^2": p * p, "p**2": p * p}
            if b not in b_rules:
                raise InvalidParameterError(f"unknown b rule {b!r}")
            params["b"] = b_rules[b]
        unknown = set(params) - {"a", "b", "theta", "label"}
        if unknown:
            raise InvalidParameterError(f"unknown prior fields {sorted(unknown)}")
        try:
            return PriorSpec(PriorKind(kind), **params)
        except ValueError as exc:
            raise InvalidParameterError(str(exc)) from exc
    raise InvalidParameterError(f"cannot interpret prior entry {entry!r}")
