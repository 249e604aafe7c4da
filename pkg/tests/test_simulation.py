import numpy as np
import pytest

from streambvs.priors import PriorSpec
from streambvs.simulation import (
    ConfigError,
    ScenarioConfig,
    builtin_scenario,
    default_threads,
    generate_stream,
    rmse_beta,
    rmse_gamma,
    run_replicate,
    run_scenario,
)
from streambvs.stream import MethodKind


def small_config(**kw):
    base = dict(p=3, beta_true=(0.2, 0.6, -0.5, 0.0), batch_sizes=(40, 10, 10, 10), replicates=3,
                seed=5, eval_batches=(2, 4))
    base.update(kw)
    return ScenarioConfig(**base)


class TestBuiltins:
    def test_sparse10(self):
        c = builtin_scenario("sparse10")
        assert c.beta_true == (0.2, 0.3, -0.4) + (0.0,) * 8
        assert sum(c.batch_sizes) == 250 and c.batch_sizes[0] == 50 and len(c.batch_sizes) == 21
        assert c.covariate_sd == 3.0 and c.replicates == 25 and c.eval_batches == (11, 21)
        assert [p.label for p in c.priors] == ["DU", "B11", "B1p", "MD", "PA", "BA", "B1psq"]
        assert c.methods == (MethodKind.OFFLINE, MethodKind.ONLINE)

    def test_sparse15(self):
        c = builtin_scenario("sparse15")
        assert len(c.beta_true) == 16 and sum(c.batch_sizes) == 300
        assert c.beta_true[:3] == (0.2, 0.3, 0.4)

    def test_nonsparse10(self):
        c = builtin_scenario("nonsparse10")
        np.testing.assert_array_equal(c.true_gamma, [1, 1, 1, 1, 1, 1, 1, 0, 0, 0])

    def test_nonsparse15(self):
        c = builtin_scenario("nonsparse15")
        assert int(c.true_gamma.sum()) == 8 and c.p == 15

    def test_unknown(self):
        with pytest.raises(ConfigError):
            builtin_scenario("dense99")


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(batch_sizes=()),
        dict(batch_sizes=(10, 0)),
        dict(replicates=0),
        dict(covariate_sd=0.0),
        dict(beta_true=(0.1, 0.2)),
        dict(eval_batches=(5,)),
        dict(seed=-1),
        dict(methods=("Offline", "Offline")),
        dict(priors=("du", "du")),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)

    def test_from_dict_overrides(self):
        c = ScenarioConfig.from_dict({"scenario": "sparse10", "replicates": 2, "seed": 9})
        assert c.replicates == 2 and c.seed == 9 and c.p == 10

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"scenario": "sparse10", "bogus": 1})

    def test_from_dict_rebuilds_priors(self):
        c = ScenarioConfig.from_dict({"p": 2, "beta_true": [0, 1, 0]}, base=builtin_scenario("sparse10"))
        assert next(pr for pr in c.priors if pr.label == "B1psq").b == 4

    def test_round_trip(self):
        c = small_config(priors=("md", {"kind": "BetaBinomial", "a": 2, "b": 3}))
        assert ScenarioConfig.from_dict(c.to_dict()) == c

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("BVS_THREADS", "4")
        assert default_threads() == 4
        monkeypatch.setenv("BVS_THREADS", "x")
        with pytest.raises(ConfigError):
            default_threads()


class TestStream:
    def test_shapes(self):
        c = builtin_scenario("sparse10")
        batches = generate_stream(c, 0)
        assert batches[0].x.shape == (50, 11)
        assert all(b.x.shape == (10, 11) for b in batches[1:])
        assert all(np.all(b.x[:, 0] == 1) for b in batches)

    def test_covariate_sd(self):
        c = builtin_scenario("sparse10")
        x = np.vstack([b.x for b in generate_stream(c, 3)])
        sds = x[:, 1:].std(axis=0, ddof=1)
        assert np.all((sds > 2.5) & (sds < 3.5))

    def test_deterministic_and_independent(self):
        c = builtin_scenario("sparse10")
        a, b = generate_stream(c, 4), generate_stream(c, 4)
        assert all(np.array_equal(u.x, v.x) and np.array_equal(u.y, v.y) for u, v in zip(a, b))
        other = generate_stream(c, 5)
        assert not np.array_equal(a[0].x, other[0].x)

    def test_replicate_out_of_range(self):
        with pytest.raises(ConfigError):
            generate_stream(small_config(), 3)


class TestRmse:
    def test_beta(self):
        assert rmse_beta([0.2, 0.3], [0.2, 0.3]) == 0.0
        assert rmse_beta([0.7] * 4, [0.0] * 4) == pytest.approx(0.7)
        assert rmse_beta([0.2, 0.0], [0.2, 0.3]) == pytest.approx(0.2121, abs=1e-4)

    def test_gamma(self):
        assert rmse_gamma([1, 0, 1], [1, 0, 1]) == 0.0
        assert rmse_gamma([0.5] * 5, [1, 0, 0, 1, 1]) == pytest.approx(0.5)
        assert rmse_gamma([0.8, 0.3], [1, 0]) == pytest.approx(0.2550, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse_beta([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            rmse_gamma([1.0], [1.0, 0.0])


class TestRun:
    def test_record_count_and_order(self):
        c = small_config()
        recs = run_scenario(c)
        assert len(recs) == 3 * 2 * 2 * 7
        keys = [(r.replicate, r.batch, ["Offline", "Online"].index(r.method),
                 [p.label for p in c.priors].index(r.prior)) for r in recs]
        assert keys == sorted(keys)
        assert all(0 <= r.rmse_gamma <= 1 and np.isfinite(r.rmse_beta) for r in recs)

    def test_all_batches(self):
        recs = run_scenario(small_config(all_batches=True, replicates=1, methods=("Online",)))
        assert sorted({r.batch for r in recs}) == [1, 2, 3, 4]

    def test_deterministic(self):
        c = small_config()
        assert run_scenario(c) == run_scenario(c)

    def test_process_pool_matches_inline(self):
        c = small_config()
        assert run_scenario(c, threads=2) == run_scenario(c, threads=1)

    def test_prior_order_independent(self):
        priors = [PriorSpec.discrete_uniform(), PriorSpec.matryoshka(1.0), PriorSpec.beta_binomial(1, 3)]
        kw = dict(batch_sizes=(80,), eval_batches=(1,), methods=("Offline",), replicates=2)
        a = run_scenario(small_config(priors=tuple(priors), **kw))
        b = run_scenario(small_config(priors=tuple(reversed(priors)), **kw))
        key = lambda r: (r.replicate, r.prior)  # noqa: E731
        assert sorted(a, key=key) == sorted(b, key=key)

    def test_online_first_batch_equals_offline(self):
        recs = run_replicate(small_config(eval_batches=(1,)), 0).records
        off = [(r.prior, r.rmse_beta, r.rmse_gamma) for r in recs if r.method == "Offline"]
        on = [(r.prior, r.rmse_beta, r.rmse_gamma) for r in recs if r.method == "Online"]
        assert off == on

    def test_failure_is_recorded_not_raised(self, monkeypatch):
        import streambvs.simulation as sim

        def boom(*a, **k):
            raise np.linalg.LinAlgError("synthetic")

        monkeypatch.setattr(sim, "init_space", boom)
        res = run_replicate(small_config(), 1)
        assert res.records == [] and "synthetic" in res.error
