"""Simulation scenarios, replicate orchestration and RMSE metrics."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from . import bma
from .logistic import DEFAULT_MAX_ITER, DEFAULT_TOL, Batch
from .priors import build_prior_table, comparison_priors, resolve_prior
from .stream import (
    MethodKind,
    SpaceState,
    init_space,
    log_marginals_bic,
    offline_space_update,
    online_space_update,
)

log = logging.getLogger(__name__)

SCENARIOS = ("sparse10", "nonsparse10", "sparse15", "nonsparse15")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    p: int
    beta_true: tuple
    batch_sizes: tuple
    covariate_sd: float = 3.0
    replicates: int = 25
    seed: int = 0
    eval_batches: tuple = (11, 21)
    priors: tuple = ()
    methods: tuple = (MethodKind.OFFLINE, MethodKind.ONLINE)
    theta: float = 1.0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    name: str = "custom"
    all_batches: bool = False

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        try:
            set_("p", int(self.p))
            set_("beta_true", tuple(float(b) for b in self.beta_true))
            set_("batch_sizes", tuple(int(n) for n in self.batch_sizes))
            set_("covariate_sd", float(self.covariate_sd))
            set_("replicates", int(self.replicates))
            set_("seed", int(self.seed))
            set_("eval_batches", tuple(sorted({int(b) for b in self.eval_batches})))
            set_("methods", tuple(MethodKind(m) for m in self.methods))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        if len(self.beta_true) != self.p + 1:
            raise ConfigError(f"beta_true needs p + 1 = {self.p + 1} entries, got {len(self.beta_true)}")
        if not self.batch_sizes or min(self.batch_sizes) < 1:
            raise ConfigError("batch_sizes must be non-empty with every size >= 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.covariate_sd > 0:
            raise ConfigError("covariate_sd must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not self.eval_batches or not all(1 <= b <= len(self.batch_sizes) for b in self.eval_batches):
            raise ConfigError(f"eval_batches must lie in 1..{len(self.batch_sizes)}")
        if not self.methods or len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must be a non-empty set")
        try:
            priors = self.priors or comparison_priors(self.p, self.theta)
            set_("priors", tuple(resolve_prior(e, self.p, self.theta) for e in priors))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        labels = [pr.label for pr in self.priors]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"prior labels must be unique, got {labels}")

    @property
    def true_gamma(self) -> np.ndarray:
        return (np.asarray(self.beta_true[1:]) != 0).astype(np.int8)

    @property
    def n_batches(self) -> int:
        return len(self.batch_sizes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "p": self.p,
            "beta_true": list(self.beta_true),
            "batch_sizes": list(self.batch_sizes),
            "covariate_sd": self.covariate_sd,
            "replicates": self.replicates,
            "seed": self.seed,
            "eval_batches": list(self.eval_batches),
            "priors": [pr.to_dict() for pr in self.priors],
            "methods": [m.value for m in self.methods],
            "theta": self.theta,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "all_batches": self.all_batches,
        }

    @classmethod
    def from_dict(cls, data: dict, base: "ScenarioConfig | None" = None) -> "ScenarioConfig":
        """Build a config from JSON-style fields, optionally on top of ``base``."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        fields_ = set(cls.__dataclass_fields__)
        unknown = set(data) - fields_ - {"scenario"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "scenario" in data:
            base = builtin_scenario(data.pop("scenario"))
        merged = {} if base is None else {k: getattr(base, k) for k in fields_}
        if base is not None and ("p" in data or "theta" in data) and "priors" not in data:
            merged["priors"] = ()  # rebuild defaults for the new p / theta
        merged.update(data)
        missing = {"p", "beta_true", "batch_sizes"} - set(merged)
        if missing:
            raise ConfigError(f"config is missing {sorted(missing)}")
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def builtin_scenario(name: str) -> ScenarioConfig:
    """One of the four reference designs (sparse/nonsparse, p = 10/15)."""
    if name == "sparse10":
        beta = (0.2, 0.3, -0.4) + (0.0,) * 8
        sizes = (50,) + (10,) * 20
    elif name == "nonsparse10":
        beta = (0.2, 0.2, 0.2, 0.2, 0.2, -0.2, -0.2, -0.2, 0.0, 0.0, 0.0)
        sizes = (50,) + (10,) * 20
    elif name == "sparse15":
        beta = (0.2, 0.3, 0.4) + (0.0,) * 13
        sizes = (100,) + (10,) * 20
    elif name == "nonsparse15":
        beta = (0.2,) * 9 + (0.0,) * 7
        sizes = (100,) + (10,) * 20
    else:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return ScenarioConfig(p=len(beta) - 1, beta_true=beta, batch_sizes=sizes, name=name)


def generate_stream(config: ScenarioConfig, replicate_index: int) -> list[Batch]:
    """Draw one replicate's batches from a generator keyed by (seed, replicate)."""
    if not 0 <= replicate_index < config.replicates:
        raise ConfigError(f"replicate {replicate_index} outside 0..{config.replicates - 1}")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(replicate_index,)))
    n = sum(config.batch_sizes)
    x = np.empty((n, config.p + 1))
    x[:, 0] = 1.0
    x[:, 1:] = rng.normal(0.0, config.covariate_sd, size=(n, config.p))
    y = (rng.random(n) < expit(x @ np.asarray(config.beta_true))).astype(np.float64)
    edges = np.cumsum((0,) + config.batch_sizes)
    return [Batch(x[a:b], y[a:b]) for a, b in zip(edges[:-1], edges[1:])]


def rmse_beta(estimate, truth) -> float:
    estimate, truth = np.asarray(estimate, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def rmse_gamma(pip, true_gamma) -> float:
    pip, true_gamma = np.asarray(pip, dtype=np.float64), np.asarray(true_gamma, dtype=np.float64)
    if pip.shape != true_gamma.shape:
        raise ValueError(f"length mismatch: {pip.shape} vs {true_gamma.shape}")
    return float(np.sqrt(np.mean((pip - true_gamma) ** 2)))


@dataclass(frozen=True)
class MetricsRecord:
    replicate: int
    batch: int
    method: str
    prior: str
    rmse_beta: float
    rmse_gamma: float
    any_nonconverged: bool


@dataclass
class ReplicateResult:
    replicate: int
    records: list = field(default_factory=list)
    nonconverged_fits: dict = field(default_factory=dict)
    error: str | None = None


def _metrics(config, state: SpaceState, method, batch, replicate, tables):
    lm = log_marginals_bic(state)
    out = []
    for spec, table in zip(config.priors, tables):
        summary = bma.summarize(lm, table, state.beta, method_id=method.value, batch_index=batch)
        out.append(MetricsRecord(
            replicate, batch, method.value, spec.label,
            rmse_beta(summary.beta_bma, config.beta_true),
            rmse_gamma(summary.pip, config.true_gamma),
            not bool(state.converged_all.all()),
        ))
    return out


def run_replicate(config: ScenarioConfig, replicate: int) -> ReplicateResult:
    """Stream one replicate through every requested method."""
    result = ReplicateResult(replicate)
    try:
        batches = generate_stream(config, replicate)
        tables = [build_prior_table(spec, config.p) for spec in config.priors]
        wanted = set(range(1, config.n_batches + 1)) if config.all_batches else set(config.eval_batches)
        first = init_space(batches[0], tol=config.tol, max_iter=config.max_iter)
        states = {m: first for m in config.methods}
        per_batch = {}
        cumulative = batches[0]
        for b in range(1, config.n_batches + 1):
            if b > 1:
                new = batches[b - 1]
                if MethodKind.OFFLINE in states:
                    cumulative = Batch.concat([cumulative, new])
                    states[MethodKind.OFFLINE] = offline_space_update(
                        states[MethodKind.OFFLINE], cumulative, tol=config.tol, max_iter=config.max_iter)
                if MethodKind.ONLINE in states:
                    states[MethodKind.ONLINE] = online_space_update(
                        states[MethodKind.ONLINE], new, tol=config.tol, max_iter=config.max_iter)
            if b in wanted:
                per_batch[b] = {m: _metrics(config, s, m, b, replicate, tables) for m, s in states.items()}
        for b in sorted(per_batch):
            for m in config.methods:
                result.records.extend(per_batch[b][m])
        result.nonconverged_fits = {m.value: s.nonconverged_fits for m, s in states.items()}
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", replicate, exc)
        result.records = []
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _worker(args):
    config, replicate = args
    with threadpool_limits(limits=1):
        return run_replicate(config, replicate)


def run_replicates(config: ScenarioConfig, threads: int = 1) -> list[ReplicateResult]:
    """Run every replicate, in order; ``threads`` > 1 uses a process pool.

    BLAS is pinned to one thread per worker so a replicate's arithmetic is the
    same however many workers run.
    """
    jobs = [(config, r) for r in range(config.replicates)]
    if threads <= 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(_worker, jobs))


def run_scenario(config: ScenarioConfig, threads: int = 1) -> list[MetricsRecord]:
    """Metrics sorted by (replicate, batch, method index, prior index)."""
    records = []
    for res in run_replicates(config, threads):
        records.extend(res.records)
    return records


def default_threads() -> int:
    env = os.environ.get("BVS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"BVS_THREADS must be an integer, got {env!r}") from None
    return 1
