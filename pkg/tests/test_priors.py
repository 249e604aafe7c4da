import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from streambvs.priors import (
    InvalidParameterError,
    PriorKind,
    PriorSpec,
    beta_one_b_ratio_limit,
    build_prior_table,
    comparison_priors,
    limiting_size_pmf,
    log_binom_row,
    log_prior_by_size,
    md_size_weights,
    resolve_prior,
    size_ratio,
    xi_from_theta,
)
from streambvs.space import ModelIndicator, model_sizes, supersets

ALL_KINDS = [
    PriorSpec.discrete_uniform(),
    PriorSpec.beta_binomial(1, 1),
    PriorSpec.beta_binomial(2.5, 0.7),
    PriorSpec.matryoshka(1.0),
    PriorSpec.truncated_poisson(1.0),
    PriorSpec.bernoulli_md(0.8),
]


def brute_force_md_ratios(log_prior, p):
    """p(gamma) / sum of p over strict supersets, for every non-full model."""
    prob = np.exp(log_prior)
    out = {}
    for bits in range((1 << p) - 1):
        out[bits] = prob[bits] / sum(prob[s] for s in supersets(bits, p))
    return out


class TestXi:
    def test_log2_gives_one(self):
        assert xi_from_theta(math.log(2.0)) == pytest.approx(1.0, rel=1e-15)

    def test_theta_one(self):
        xi = xi_from_theta(1.0)
        assert xi == pytest.approx(0.58197671, abs=1e-8)
        assert math.log(1 + 1 / xi) == pytest.approx(1.0, abs=1e-12)

    def test_small_theta_round_trip(self):
        xi = xi_from_theta(1e-9)
        assert xi == pytest.approx(1e9, rel=1e-3)
        assert math.log1p(1 / xi) == pytest.approx(1e-9, rel=1e-6)

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
    def test_invalid(self, bad):
        with pytest.raises(InvalidParameterError):
            xi_from_theta(bad)


class TestLogPriorBySize:
    def test_discrete_uniform(self):
        for k in range(11):
            assert log_prior_by_size(PriorSpec.discrete_uniform(), 10, k) == pytest.approx(math.log(1 / 1024))

    def test_beta11(self):
        value = log_prior_by_size(PriorSpec.beta_binomial(1, 1), 10, 3)
        exact = math.log(math.factorial(3) * math.factorial(7) / math.factorial(11))
        assert value == pytest.approx(exact, rel=1e-13)
        assert math.exp(value) == pytest.approx(7.5758e-4, rel=1e-4)

    def test_bernoulli_md_null(self):
        assert log_prior_by_size(PriorSpec.bernoulli_md(1.0), 10, 0) == pytest.approx(-1.053605, abs=1e-6)

    def test_truncated_poisson_p1(self):
        assert log_prior_by_size(PriorSpec.truncated_poisson(1.0), 1, 0) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_bernoulli_md_needs_theta_below_p(self):
        with pytest.raises(InvalidParameterError):
            log_prior_by_size(PriorSpec.bernoulli_md(10.0), 10, 0)

    @pytest.mark.parametrize("k", [-1, 11])
    def test_k_out_of_range(self, k):
        with pytest.raises(InvalidParameterError):
            log_prior_by_size(PriorSpec.discrete_uniform(), 10, k)

    @pytest.mark.parametrize("a,b,p,k", [(1, 1, 10, 3), (1, 10, 10, 2), (2.5, 0.7, 6, 4), (1, 100, 10, 0)])
    def test_beta_binomial_matches_quadrature(self, a, b, p, k):
        # one specific model: integrate w^k (1-w)^(p-k) against Beta(a, b)
        val, _ = integrate.quad(lambda w: w**k * (1 - w) ** (p - k) * stats.beta.pdf(w, a, b), 0, 1,
                                epsabs=1e-14, epsrel=1e-12)
        assert math.exp(log_prior_by_size(PriorSpec.beta_binomial(a, b), p, k)) == pytest.approx(val, rel=1e-8)


class TestMatryoshka:
    def test_p1(self):
        q = np.exp(md_size_weights(1.0, 1))
        assert q[0] == pytest.approx(1 / math.e, abs=1e-12)
        assert q[1] == pytest.approx(0.632121, abs=1e-6)

    def test_p2_hand_unrolled(self):
        xi = xi_from_theta(1.0)
        unnorm = np.array([xi * (2 * xi + 1), xi, 1.0])
        expected = unnorm / (unnorm @ [1, 2, 1])
        np.testing.assert_allclose(np.exp(md_size_weights(1.0, 2)), expected, rtol=1e-13)
        assert expected[0] == pytest.approx(0.367879, abs=1e-6)

    @pytest.mark.parametrize("p", [1, 2, 3, 5, 8])
    @pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
    def test_defining_property_brute_force(self, p, theta):
        log_prior = build_prior_table(PriorSpec.matryoshka(theta), p).log_prior_models()
        xi = xi_from_theta(theta)
        for bits, ratio in brute_force_md_ratios(log_prior, p).items():
            assert ratio == pytest.approx(xi, abs=1e-8), bits

    def test_large_p_is_finite_and_normalized(self):
        table = build_prior_table(PriorSpec.matryoshka(1.0), 2000)
        assert np.all(np.isfinite(table.log_q))
        assert np.exp(table.log_size_pmf).sum() == pytest.approx(1.0, abs=1e-10)


class TestPriorTable:
    def test_discrete_uniform_p3(self):
        t = build_prior_table(PriorSpec.discrete_uniform(), 3)
        np.testing.assert_allclose(t.log_size_pmf, np.log([1 / 8, 3 / 8, 3 / 8, 1 / 8]), atol=1e-15)

    def test_beta11_uniform_sizes(self):
        t = build_prior_table(PriorSpec.beta_binomial(1, 1), 10)
        np.testing.assert_allclose(t.log_size_pmf, np.log(1 / 11), atol=1e-13)

    def test_md_normalization(self):
        t = build_prior_table(PriorSpec.matryoshka(1.0), 10)
        assert np.exp(t.log_size_pmf).sum() == pytest.approx(1.0, abs=1e-10)

    def test_log_binom_row(self):
        for p in (1, 2, 7, 40, 301):
            exact = [math.log(math.comb(p, k)) for k in range(p + 1)]
            np.testing.assert_allclose(log_binom_row(p), exact, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("spec", ALL_KINDS, ids=lambda s: s.label)
    @pytest.mark.parametrize("p", [1, 4, 9, 12])
    def test_brute_force_normalization(self, spec, p):
        total = math.fsum(np.exp(build_prior_table(spec, p).log_prior_models()))
        assert total == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("spec", ALL_KINDS, ids=lambda s: s.label)
    def test_exchangeability(self, spec):
        p = 8
        log_prior = build_prior_table(spec, p).log_prior_models()
        sizes = model_sizes(p)
        for k in range(p + 1):
            vals = log_prior[sizes == k]
            assert np.ptp(vals) <= 1e-12

    def test_bernoulli_md_per_model_product(self):
        # independent route: product of per-indicator Bernoulli probabilities
        p, theta = 6, 1.3
        w = theta / p
        log_prior = build_prior_table(PriorSpec.bernoulli_md(theta), p).log_prior_models()
        for bits in range(1 << p):
            gamma = ModelIndicator(bits, p).gamma
            direct = math.prod(w if g else 1 - w for g in gamma)
            assert math.exp(log_prior[bits]) == pytest.approx(direct, rel=1e-12)

    def test_md_close_to_truncated_poisson(self):
        # regression bound recorded from this implementation
        for p, bound in ((10, 1e-6), (15, 1e-10)):
            a = build_prior_table(PriorSpec.matryoshka(1.0), p).size_pmf
            b = build_prior_table(PriorSpec.truncated_poisson(1.0), p).size_pmf
            assert 0.5 * np.abs(a - b).sum() < bound


class TestLimits:
    def test_poisson_pmf(self):
        assert limiting_size_pmf(1.0, 0) == pytest.approx(0.3678794, abs=1e-7)
        assert limiting_size_pmf(1.0, 1) == pytest.approx(limiting_size_pmf(1.0, 0), rel=1e-15)
        assert limiting_size_pmf(2.0, 3) == pytest.approx(0.1804470, abs=1e-7)

    def test_poisson_pmf_invalid(self):
        with pytest.raises(InvalidParameterError):
            limiting_size_pmf(0.0, 1)
        with pytest.raises(InvalidParameterError):
            limiting_size_pmf(1.0, -1)

    def test_size_ratio_bernoulli_closed_form(self):
        assert size_ratio(PriorSpec.bernoulli_md(1.0), 1000, 0) == pytest.approx(1000 / 999, rel=1e-13)

    @pytest.mark.parametrize("p", [5, 10, 37])
    def test_size_ratio_beta11_is_one(self, p):
        for k in range(p):
            assert size_ratio(PriorSpec.beta_binomial(1, 1), p, k) == pytest.approx(1.0, rel=1e-12)

    def test_size_ratio_md_large_p(self):
        assert size_ratio(PriorSpec.matryoshka(1.0), 10000, 2) == pytest.approx(1 / 3, abs=1e-2)

    def test_size_ratio_md_approaches_limit(self):
        devs = [abs(size_ratio(PriorSpec.matryoshka(2.0), p, 1) - 1.0) for p in (4, 8, 16, 64)]
        assert all(a >= b for a, b in zip(devs, devs[1:]))

    def test_size_ratio_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            size_ratio(PriorSpec.discrete_uniform(), 5, 5)

    def test_proposition1_convergence(self):
        spec = PriorSpec.bernoulli_md(1.0)

        def max_dev(p):
            pmf = build_prior_table(spec, p).size_pmf
            return max(abs(pmf[k] - limiting_size_pmf(1.0, k)) for k in range(7))

        assert max_dev(10000) < 1e-3
        assert max_dev(10000) < max_dev(100)

    @pytest.mark.parametrize("p", [100, 1000, 10000])
    @pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
    def test_proposition2_gap(self, p, theta):
        spec = PriorSpec.bernoulli_md(theta)
        for k in range(6):
            lim = theta / (k + 1)
            gap = abs(size_ratio(spec, p, k) - lim)
            assert gap <= lim * abs(theta - k) / (p - theta) * (1 + 1e-9) + 1e-14

    def test_beta_one_b_limits(self):
        p, k = 20000, 2
        fixed = size_ratio(PriorSpec.beta_binomial(1, 3.0), p, k)
        assert fixed == pytest.approx(beta_one_b_ratio_limit("fixed", p), rel=1e-3)
        m = 2.0
        mp = size_ratio(PriorSpec.beta_binomial(1, m * p), p, k)
        assert mp == pytest.approx(beta_one_b_ratio_limit("mp", p, m=m), rel=1e-3)
        v = 2.0
        pv = size_ratio(PriorSpec.beta_binomial(1, p**v), p, k)
        assert pv == pytest.approx(beta_one_b_ratio_limit("pv", p, v=v), rel=1e-3)
        with pytest.raises(InvalidParameterError):
            beta_one_b_ratio_limit("pv", p, v=0.5)

    @settings(max_examples=30, deadline=None)
    @given(theta=st.floats(0.05, 5.0), p=st.integers(20, 400), k=st.integers(0, 15))
    def test_bernoulli_ratio_identity(self, theta, p, k):
        expected = theta / (k + 1) * (p - k) / (p - theta)
        assert size_ratio(PriorSpec.bernoulli_md(theta), p, k) == pytest.approx(expected, rel=1e-12)


class TestSpecs:
    def test_comparison_priors_order(self):
        specs = comparison_priors(10)
        assert [s.label for s in specs] == ["DU", "B11", "B1p", "MD", "PA", "BA", "B1psq"]
        assert specs[2].b == 10 and specs[6].b == 100
        assert all(s.theta == 1.0 for s in specs[3:6])

    @pytest.mark.parametrize("kwargs", [
        dict(kind=PriorKind.BETA_BINOMIAL, a=1.0),
        dict(kind=PriorKind.BETA_BINOMIAL, a=1.0, b=-2.0),
        dict(kind=PriorKind.MATRYOSHKA_DOLL, theta=0.0),
        dict(kind=PriorKind.MATRYOSHKA_DOLL, theta=1.0, a=1.0),
        dict(kind=PriorKind.DISCRETE_UNIFORM, theta=1.0),
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(InvalidParameterError):
            PriorSpec(**kwargs)

    def test_resolve_dict(self):
        spec = resolve_prior({"kind": "BetaBinomial", "a": 1, "b": "p^2", "label": "X"}, 15)
        assert spec.b == 225 and spec.label == "X"
        with pytest.raises(InvalidParameterError):
            resolve_prior({"kind": "BetaBinomial", "a": 1, "b": "sqrt"}, 15)
        with pytest.raises(InvalidParameterError):
            resolve_prior("nope", 15)

    def test_label_not_part_of_identity(self):
        assert PriorSpec.matryoshka(1.0, label="A") == PriorSpec.matryoshka(1.0, label="B")


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["du", "bb", "md", "pa", "ba"]),
    p=st.integers(1, 40),
    theta=st.floats(0.1, 3.0),
    a=st.floats(0.2, 5.0),
    b=st.floats(0.2, 50.0),
)
def test_size_pmf_sums_to_one(kind, p, theta, a, b):
    spec = {
        "du": lambda: PriorSpec.discrete_uniform(),
        "bb": lambda: PriorSpec.beta_binomial(a, b),
        "md": lambda: PriorSpec.matryoshka(theta),
        "pa": lambda: PriorSpec.truncated_poisson(theta),
        "ba": lambda: PriorSpec.bernoulli_md(min(theta, 0.9 * p)),
    }[kind]()
    t = build_prior_table(spec, p)
    assert math.fsum(np.exp(t.log_size_pmf)) == pytest.approx(1.0, abs=1e-10)
