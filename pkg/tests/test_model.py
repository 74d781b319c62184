import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hidalgo.model import (
    MixtureParams,
    PriorSpec,
    adjacency_log_likelihood,
    log_gamma_cdf,
    log_normalizer,
    log_normalizer_table,
    mixture_log_likelihood,
    n_in,
    pareto_log_density,
    prior_log_density,
    sigmoid_g,
    truncated_gamma_log_pdf,
)
from hidalgo.neighbors import build_adjacency, build_knn_graph
from oracles import brute_adjacency, brute_normalizer


class TestPareto:
    def test_values(self):
        assert pareto_log_density(1.0, 1.0, 2.0) == pytest.approx(math.log(2))
        assert pareto_log_density(2.0, 1.0, 1.0) == pytest.approx(math.log(0.25))
        assert pareto_log_density(0.5, 1.0, 3.0) == -np.inf

    def test_domain(self):
        with pytest.raises(ValueError):
            pareto_log_density(2.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            pareto_log_density(2.0, 1.0, -1.0)

    @pytest.mark.parametrize("d", [0.5, 1, 5, 20])
    def test_integrates_to_one(self, d):
        # substitute x = 1/t to integrate over a finite interval
        f = lambda t: math.exp(pareto_log_density(1.0 / t, 1.0, d)) / t**2 if t > 0 else 0.0
        val, _ = integrate.quad(f, 0, 1, epsabs=1e-12, limit=200)
        assert abs(val - 1) < 1e-6

    def test_matches_scipy(self):
        x = np.linspace(1, 10, 7)
        np.testing.assert_allclose(pareto_log_density(x, 1.0, 2.5), stats.pareto(2.5).logpdf(x))


class TestMixture:
    def test_single_component(self):
        mu = np.array([1.2, 2.0, 5.0])
        val = mixture_log_likelihood(mu, MixtureParams([3.0], [1.0]))
        assert val == pytest.approx(np.sum(pareto_log_density(mu, 1.0, 3.0)))

    def test_identical_components_collapse(self):
        mu = np.array([1.2, 2.0, 5.0])
        a = mixture_log_likelihood(mu, MixtureParams([2.0, 2.0], [0.3, 0.7]))
        assert a == pytest.approx(mixture_log_likelihood(mu, MixtureParams([2.0], [1.0])), rel=1e-14)

    def test_exact_rational_oracle(self):
        # mu = (2, 3), d = (1, 4), p = (3/10, 7/10): every term is rational
        p, d = [Fraction(3, 10), Fraction(7, 10)], [1, 4]
        total = 1.0
        for m in (2, 3):
            total *= float(sum(pk * dk * Fraction(1, m ** (dk + 1)) for pk, dk in zip(p, d)))
        val = mixture_log_likelihood([2.0, 3.0], MixtureParams([1.0, 4.0], [0.3, 0.7]))
        assert val == pytest.approx(math.log(total), rel=1e-14)

    def test_label_permutation_invariance(self, rng):
        mu = 1 + rng.exponential(size=50)
        a = mixture_log_likelihood(mu, MixtureParams([1.0, 3.0, 7.0], [0.2, 0.5, 0.3]))
        b = mixture_log_likelihood(mu, MixtureParams([7.0, 1.0, 3.0], [0.3, 0.2, 0.5]))
        assert a == pytest.approx(b, rel=1e-13)

    def test_rejects_ratios_below_one(self):
        with pytest.raises(ValueError):
            mixture_log_likelihood([0.9, 2.0], MixtureParams([1.0], [1.0]))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MixtureParams([1.0, 2.0], [0.5, 0.6])
        with pytest.raises(ValueError):
            MixtureParams([0.0], [1.0])


class TestNormalizer:
    @pytest.mark.parametrize("N,q", [(5, 2), (6, 2), (7, 3), (8, 1)])
    def test_subset_enumeration(self, N, q):
        for n in range(1, N + 1):
            for zeta in (0.55, 0.8, 0.97):
                assert abs(log_normalizer(zeta, n, N, q) - brute_normalizer(zeta, n, N, q)) < 1e-12

    def test_table_matches_scalar(self):
        table = log_normalizer_table(0.8, 9, 3)
        assert table[0] == 0
        for n in range(1, 10):
            assert table[n] == pytest.approx(log_normalizer(0.8, n, 9, 3), abs=1e-13)

    def test_half_is_constant(self):
        # with zeta = 1/2 the normaliser only counts subsets
        vals = [log_normalizer(0.5, n, 10, 3) for n in range(1, 11)]
        np.testing.assert_allclose(vals, math.log(math.comb(9, 3) * 0.5**3), rtol=1e-13)


class TestAdjacency:
    def test_one_cluster(self):
        rows = np.array([[1], [0], [1], [2]])
        z = np.zeros(4, dtype=int)
        val = adjacency_log_likelihood(rows, z, 0.8)
        assert val == pytest.approx(4 * (math.log(0.8) - log_normalizer(0.8, 4, 4, 1)))
        assert n_in(rows, z).tolist() == [1, 1, 1, 1]

    def test_brute_force_n5(self, rng):
        pts = rng.normal(size=(5, 2))
        adj = build_adjacency(build_knn_graph(pts, 2), 2)
        for z in itertools.product((0, 1), repeat=5):
            z = np.array(z)
            assert adjacency_log_likelihood(adj, z, 0.75) == pytest.approx(brute_adjacency(adj.rows, z, 0.75), abs=1e-11)

    def test_half_does_not_depend_on_labels(self, rng):
        adj = build_adjacency(build_knn_graph(rng.normal(size=(8, 2)), 2), 2)
        vals = {round(adjacency_log_likelihood(adj, rng.integers(0, 3, 8), 0.5, allow_half=True), 10) for _ in range(20)}
        assert len(vals) == 1

    def test_zeta_domain(self):
        rows = np.array([[1], [0], [1]])
        with pytest.raises(ValueError):
            adjacency_log_likelihood(rows, np.zeros(3, int), 0.5)
        with pytest.raises(ValueError):
            adjacency_log_likelihood(rows, np.zeros(3, int), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 2), min_size=8, max_size=8), st.permutations([0, 1, 2]))
    def test_relabel_invariance(self, z, perm):
        rows = build_adjacency(build_knn_graph(np.arange(8.0)[:, None] ** 1.3, 3), 3).rows
        z = np.array(z)
        a = adjacency_log_likelihood(rows, z, 0.8)
        b = adjacency_log_likelihood(rows, np.array(perm)[z], 0.8)
        assert a == pytest.approx(b, abs=1e-10)


class TestSigmoid:
    def test_midpoint_is_exact(self):
        for tau, nu in [(1.0, 0.01), (2.5, 0.3), (0.1, 7.0)]:
            assert sigmoid_g(tau, tau, nu) == 0.5

    def test_limits_and_steepness(self):
        assert sigmoid_g(1e6, 1.0, 0.1) == 1.0
        assert sigmoid_g(0.0, 10.0, 0.1) < 1e-40
        assert sigmoid_g(0.9, 1.0, 0.01) < 0.01
        assert sigmoid_g(1.1, 1.0, 0.01) > 0.99

    @given(st.floats(0, 20), st.floats(0.01, 5))
    def test_monotone(self, delta, step):
        # range kept where 1 - g is still resolvable in double precision
        lo, hi = sigmoid_g(delta, 3.0, 1.0), sigmoid_g(delta + step, 3.0, 1.0)
        assert 0 < lo < hi < 1

    def test_parameters(self):
        with pytest.raises(ValueError):
            sigmoid_g(1.0, 0.0, 0.1)


class TestPriors:
    def test_plain_is_gamma(self):
        spec = PriorSpec(a=2.0, b=3.0)
        d = np.array([0.5, 4.0])
        assert prior_log_density(d, spec) == pytest.approx(np.sum(stats.gamma(2.0, scale=1 / 3.0).logpdf(d)))

    def test_truncated_support(self):
        spec = PriorSpec("truncated", D_cap=10.0)
        assert prior_log_density([10.1], spec) == -np.inf
        assert np.isfinite(prior_log_density([9.9], spec))

    def test_truncated_normalisation(self):
        a, b, cap = 2.0, 0.3, 5.0
        val, _ = integrate.quad(lambda x: math.exp(truncated_gamma_log_pdf(x, a, b, cap)), 0, cap)
        assert abs(val - 1) < 1e-6
        assert math.exp(log_gamma_cdf(cap, a, b)) == pytest.approx(stats.gamma(a, scale=1 / b).cdf(cap), rel=1e-12)

    def test_log_gamma_cdf_deep_tail(self):
        # large shape: the cap sits far below the mean
        a, b, x = 800.0, 50.0, 5.0
        exact = stats.gamma(a, scale=1 / b).logcdf(x)
        assert log_gamma_cdf(x, a, b) == pytest.approx(exact, rel=1e-2)

    def test_spike_bookkeeping(self):
        spec = PriorSpec("spike", rho_hat=0.3, D_cap=8.0)
        on_cap = prior_log_density([8.0], spec, at_cap=[True])
        assert on_cap == pytest.approx(math.log(0.7))
        slab = prior_log_density([3.0], spec, at_cap=[False])
        assert slab == pytest.approx(math.log(0.3) + float(truncated_gamma_log_pdf(3.0, 1.0, 1.0, 8.0)))

    def test_repulsive(self):
        spec = PriorSpec("repulsive", tau=1.0, nu=0.1)
        base = float(stats.gamma(1.0).logpdf(2.0))
        assert prior_log_density([2.0], spec) == pytest.approx(base)
        two = prior_log_density([2.0, 3.0], spec)
        assert two == pytest.approx(base + float(stats.gamma(1.0).logpdf(3.0)) + math.log(0.5))

    def test_spec_validation_and_json(self, tmp_path):
        with pytest.raises(ValueError, match="D_cap"):
            PriorSpec("truncated")
        with pytest.raises(ValueError):
            PriorSpec(zeta=0.5)
        with pytest.raises(ValueError):
            PriorSpec(rho_hat=1.0)
        with pytest.raises(ValueError):
            PriorSpec(c=(1.0, -1.0))
        spec = PriorSpec("spike", a=2.0, c=(1.0, 2.0), D_cap=4.0, zeta_mode="sampled", zeta_beta=(2.0, 1.0))
        spec.to_json(tmp_path / "p.json")
        assert PriorSpec.from_json(tmp_path / "p.json") == spec
        with pytest.raises(ValueError, match="unknown"):
            PriorSpec.from_dict({"alpha": 1})
