"""scikit-learn compatible front ends."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from . import posterior
from .model import PriorSpec
from .neighbors import build_adjacency, build_knn_graph, compute_mu, jitter
from .sampler import PosteriorTrace, SamplerConfig, chain_seeds, run_chain
from .synth import twonn_linear_fit, twonn_mle


class Hidalgo(ClusterMixin, TransformerMixin, BaseEstimator):
    """Heterogeneous intrinsic dimension estimation with a Bayesian mixture of Paretos.

    Parameters
    ----------
    n_components : int, default=3
        Number of mixture components K.
    prior : {"plain", "truncated", "spike", "repulsive"}, default="plain"
        Prior on the component IDs. ``truncated`` and ``spike`` cap the IDs
        at the ambient dimension of ``X``.
    q : int, default=3
        Neighbourhood size of the adjacency term.
    zeta : float, default=0.8
        Probability that a neighbour shares the point's component; the
        starting value when ``sample_zeta`` is set.
    sample_zeta : bool, default=False
    adjacency : bool, default=True
        Switch the neighbourhood term on or off.
    a, b : float, default=1.0
        Gamma shape and rate of the base prior.
    c : sequence of float or None
        Dirichlet concentrations; ``None`` means all ones.
    rho_hat : float, default=0.5
        Slab weight of the spike prior.
    tau, nu : float, default=1.0, 0.1
        Location and softness of the repulsion sigmoid.
    n_sweeps, burn_in, thin : int, default=2000, 1000, 1
    n_chains : int, default=1
        Chain ``i`` is seeded with ``SeedSequence([random_state, i])``; chains
        are pooled for the estimates.
    n_jobs : int, default=1
    partition_loss : {"binder", "vi"}, default="binder"
    jitter : bool, default=False
        Break exact duplicate points with noise of relative size 1e-8.
    random_state : int, default=0

    Attributes
    ----------
    mu_ : ndarray of shape (n_samples,)
        Two-NN ratios.
    traces_ : list of PosteriorTrace
    trace_ : PosteriorTrace
        All chains pooled.
    id_mean_, id_median_ : ndarray of shape (n_samples,)
    id_credible_ : ndarray of shape (n_samples, 2)
        2.5% and 97.5% quantiles.
    psm_ : ndarray of shape (n_samples, n_samples)
        Posterior co-clustering matrix.
    labels_ : ndarray of shape (n_samples,)
        Point-estimate partition.
    """

    def __init__(self, n_components=3, prior="plain", q=3, zeta=0.8, sample_zeta=False,
                 adjacency=True, a=1.0, b=1.0, c=None, rho_hat=0.5, tau=1.0, nu=0.1,
                 n_sweeps=2000, burn_in=1000, thin=1, n_chains=1, n_jobs=1,
                 partition_loss="binder", jitter=False, random_state=0):
        self.n_components = n_components
        self.prior = prior
        self.q = q
        self.zeta = zeta
        self.sample_zeta = sample_zeta
        self.adjacency = adjacency
        self.a = a
        self.b = b
        self.c = c
        self.rho_hat = rho_hat
        self.tau = tau
        self.nu = nu
        self.n_sweeps = n_sweeps
        self.burn_in = burn_in
        self.thin = thin
        self.n_chains = n_chains
        self.n_jobs = n_jobs
        self.partition_loss = partition_loss
        self.jitter = jitter
        self.random_state = random_state

    def prior_spec(self, D=None) -> PriorSpec:
        return PriorSpec(
            variant=self.prior, a=self.a, b=self.b, rho_hat=self.rho_hat, tau=self.tau, nu=self.nu,
            c=None if self.c is None else tuple(self.c), zeta=self.zeta,
            zeta_mode="sampled" if self.sample_zeta else "fixed",
            D_cap=float(D) if (D is not None and self.prior in ("truncated", "spike")) else None,
        )

    def sampler_configs(self, D=None) -> list:
        seed = 0 if self.random_state is None else int(self.random_state)
        seeds = chain_seeds(seed, self.n_chains)
        spec = self.prior_spec(D)
        return [
            SamplerConfig(K=self.n_components, n_sweeps=self.n_sweeps, burn_in=self.burn_in,
                          thin=self.thin, seed=s, prior=spec, adjacency_on=self.adjacency, q=self.q)
            for s in seeds
        ]

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=3)
        if self.partition_loss not in ("binder", "vi"):
            raise ValueError(f"partition_loss must be 'binder' or 'vi', got {self.partition_loss!r}")
        self.n_features_in_ = X.shape[1]
        if self.jitter:
            X = jitter(X, rng=self.random_state)
        graph = build_knn_graph(X, q_max=max(2, self.q))
        self.mu_ = compute_mu(graph)
        self.adjacency_ = build_adjacency(graph, self.q)
        configs = self.sampler_configs(X.shape[1])
        if self.n_jobs == 1 or len(configs) == 1:
            traces = [run_chain(self.mu_, self.adjacency_.rows, cfg) for cfg in configs]
        else:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                traces = list(pool.map(lambda cfg: run_chain(self.mu_, self.adjacency_.rows, cfg), configs))
        self._set_posterior(traces)
        return self

    def _set_posterior(self, traces):
        self.traces_ = traces
        self.trace_ = traces[0] if len(traces) == 1 else PosteriorTrace.concatenate(traces)
        est = posterior.per_observation_id(self.trace_)
        self.id_mean_ = est.mean_id
        self.id_median_ = est.median_id
        self.id_credible_ = est.credible
        self.psm_ = posterior.coclustering_matrix(self.trace_)
        self.labels_ = posterior.point_partition(self.psm_, self.trace_, self.partition_loss)

    def transform(self, X=None):
        """Per-observation posterior median ID of the fitted data, as a column."""
        check_is_fitted(self, "id_median_")
        return self.id_median_[:, None]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X)

    def mean_log_posterior(self) -> float:
        check_is_fitted(self, "trace_")
        return float(np.mean(self.trace_.log_posterior))


class TwoNN(BaseEstimator):
    """Classical global two-NN estimator (maximum likelihood or linearised fit)."""

    def __init__(self, method="mle", discard_fraction=0.1):
        self.method = method
        self.discard_fraction = discard_fraction

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=3)
        self.mu_ = compute_mu(build_knn_graph(X, 2))
        if self.method == "mle":
            self.dimension_ = twonn_mle(self.mu_)
        elif self.method == "linear":
            self.dimension_ = twonn_linear_fit(self.mu_, self.discard_fraction)
        else:
            raise ValueError(f"method must be 'mle' or 'linear', got {self.method!r}")
        return self

    @property
    def dimension(self):
        if not hasattr(self, "dimension_"):
            raise NotFittedError("call fit first")
        return self.dimension_
