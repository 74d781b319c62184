"""Densities of the Pareto mixture, the neighbourhood likelihood and the priors on the IDs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

PRIOR_VARIANTS = ("plain", "truncated", "spike", "repulsive")


@dataclass
class PriorSpec:
    """Hyperparameters of the model.

    ``variant`` selects the prior on the component IDs:

    - ``plain``: independent Gamma(a, b)
    - ``truncated``: Gamma(a, b) restricted to (0, D_cap)
    - ``spike``: ``rho_hat`` * truncated Gamma + (1 - rho_hat) * point mass at D_cap
    - ``repulsive``: independent Gamma base densities times min over pairs of
      a sigmoid of the pairwise ID gap (location ``tau``, softness ``nu``)

    ``zeta`` is the neighbourhood-homogeneity parameter. With
    ``zeta_mode="sampled"`` it gets a Beta(f1, f0) prior rescaled onto (0.5, 1).
    """

    variant: str = "plain"
    a: float = 1.0
    b: float = 1.0
    rho_hat: float = 0.5
    tau: float = 1.0
    nu: float = 0.1
    c: tuple | None = None
    zeta: float = 0.8
    zeta_mode: str = "fixed"
    zeta_beta: tuple = (1.0, 1.0)
    zeta_step: float = 0.5
    D_cap: float | None = None
    g0_truncated: bool = False

    def __post_init__(self):
        if self.variant not in PRIOR_VARIANTS:
            raise ValueError(f"variant must be one of {PRIOR_VARIANTS}, got {self.variant!r}")
        for name in ("a", "b", "tau", "nu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.rho_hat < 1:
            raise ValueError(f"rho_hat must lie in (0, 1), got {self.rho_hat}")
        if self.zeta_mode not in ("fixed", "sampled"):
            raise ValueError(f"zeta_mode must be 'fixed' or 'sampled', got {self.zeta_mode!r}")
        if not 0.5 < self.zeta < 1:
            raise ValueError(f"zeta must lie in (0.5, 1), got {self.zeta}")
        if len(self.zeta_beta) != 2 or min(self.zeta_beta) <= 0:
            raise ValueError(f"zeta_beta must be two positive numbers, got {self.zeta_beta}")
        if self.c is not None:
            self.c = tuple(float(v) for v in self.c)
            if min(self.c) <= 0:
                raise ValueError("Dirichlet concentrations must be positive")
        if self.needs_cap and self.D_cap is None:
            raise ValueError(f"variant {self.variant!r} needs D_cap (the ambient dimension)")
        if self.D_cap is not None and not self.D_cap > 0:
            raise ValueError(f"D_cap must be positive, got {self.D_cap}")

    @property
    def needs_cap(self) -> bool:
        return self.variant in ("truncated", "spike") or (self.variant == "repulsive" and self.g0_truncated)

    def concentrations(self, K: int) -> np.ndarray:
        if self.c is None:
            return np.ones(K)
        if len(self.c) != K:
            raise ValueError(f"{len(self.c)} concentrations given for K={K}")
        return np.asarray(self.c, dtype=float)

    def with_cap(self, D) -> "PriorSpec":
        """Copy with ``D_cap`` filled in when it is unset."""
        if self.D_cap is not None:
            return self
        values = asdict(self)
        values["D_cap"] = float(D)
        return PriorSpec(**values)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["c"] = list(self.c) if self.c is not None else None
        out["zeta_beta"] = list(self.zeta_beta)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "PriorSpec":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown prior fields: {sorted(unknown)}")
        payload = dict(payload)
        if payload.get("zeta_beta") is not None:
            payload["zeta_beta"] = tuple(payload["zeta_beta"])
        return cls(**payload)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "PriorSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class MixtureParams:
    d: np.ndarray
    p: np.ndarray
    at_cap: np.ndarray = field(default=None)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.d.shape != self.p.shape or self.d.ndim != 1:
            raise ValueError("d and p must be vectors of equal length")
        if np.any(self.d <= 0):
            raise ValueError("component IDs must be positive")
        if np.any(self.p < 0) or abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if self.at_cap is None:
            self.at_cap = np.zeros(self.d.shape, dtype=bool)


# ---------------------------------------------------------------------------
# Pareto mixture


def pareto_log_density(x, scale_a, shape_d):
    """log of d a^d / x^(d+1) on x >= a, ``-inf`` below the support."""
    if not scale_a > 0 or not shape_d > 0:
        raise ValueError(f"Pareto parameters must be positive, got a={scale_a}, d={shape_d}")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(shape_d) + shape_d * np.log(scale_a) - (shape_d + 1.0) * np.log(x)
    out = np.where(x >= scale_a, out, -np.inf)
    return out[()] if out.ndim == 0 else out


def mixture_log_likelihood(mu, params: MixtureParams) -> float:
    """sum_i log sum_k p_k d_k mu_i^-(d_k+1)."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 1):
        raise ValueError("two-NN ratios must be >= 1")
    logmu = np.log(mu)[:, None]
    with np.errstate(divide="ignore"):
        terms = np.log(params.p)[None, :] + np.log(params.d)[None, :] - (params.d[None, :] + 1.0) * logmu
    return float(np.sum(special.logsumexp(terms, axis=1)))


# ---------------------------------------------------------------------------
# neighbourhood likelihood


def log_normalizer(zeta: float, cluster_size: int, N: int, q: int) -> float:
    """log Z(zeta, n): sum over the q-subsets of the other N-1 points of zeta^m (1-zeta)^(q-m).

    ``m`` counts chosen neighbours that share the cluster of size ``n``
    (which includes the point itself).
    """
    n = int(cluster_size)
    if n < 1 or n > N:
        raise ValueError(f"cluster size must lie in [1, N], got {n}")
    m = np.arange(max(0, q - (N - n)), min(q, n - 1) + 1)
    log_comb = (
        special.gammaln(n) - special.gammaln(m + 1) - special.gammaln(n - m)
        + special.gammaln(N - n + 1) - special.gammaln(q - m + 1) - special.gammaln(N - n - q + m + 1)
    )
    return float(special.logsumexp(log_comb + m * math.log(zeta) + (q - m) * math.log1p(-zeta)))


def log_normalizer_table(zeta: float, N: int, q: int) -> np.ndarray:
    """log Z for every cluster size 0..N (entry 0 is a placeholder of 0)."""
    table = np.zeros(N + 1)
    n = np.arange(1, N + 1)[:, None]
    m = np.arange(q + 1)[None, :]
    valid = (m >= q - (N - n)) & (m <= n - 1)
    with np.errstate(invalid="ignore"):
        log_comb = (
            special.gammaln(n) - special.gammaln(m + 1) - special.gammaln(n - m)
            + special.gammaln(N - n + 1) - special.gammaln(q - m + 1) - special.gammaln(N - n - q + m + 1)
        )
    terms = np.where(valid, log_comb + m * math.log(zeta) + (q - m) * math.log1p(-zeta), -np.inf)
    top = terms.max(axis=1, keepdims=True)
    table[1:] = (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True)))[:, 0]
    return table


def n_in(adj_rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Number of each point's q neighbours that share its label."""
    z = np.asarray(z)
    return np.sum(z[adj_rows] == z[:, None], axis=1)


def adjacency_log_likelihood(adj, z, zeta: float, allow_half: bool = False) -> float:
    """Sum over rows of n_in log zeta + (q - n_in) log(1 - zeta) - log Z(zeta, N_{z_i})."""
    if not (0.5 < zeta < 1 or (allow_half and zeta == 0.5)):
        raise ValueError(f"zeta must lie in (0.5, 1), got {zeta}")
    rows = adj.rows if hasattr(adj, "rows") else np.asarray(adj)
    z = np.asarray(z, dtype=np.int64)
    N, q = rows.shape
    if z.shape != (N,):
        raise ValueError("one label per row required")
    counts = np.bincount(z, minlength=z.max() + 1)
    table = log_normalizer_table(zeta, N, q)
    m = n_in(rows, z)
    return float(np.sum(m * math.log(zeta) + (q - m) * math.log1p(-zeta)) - np.sum(table[counts[z]]))


# ---------------------------------------------------------------------------
# priors on the component IDs


def sigmoid_g(delta, tau: float, nu: float):
    """Repulsion factor 1 / (1 + exp(-(delta - tau) / nu))."""
    if not tau > 0 or not nu > 0:
        raise ValueError("tau and nu must be positive")
    return special.expit((np.asarray(delta, dtype=float) - tau) / nu)


def log_sigmoid_g(delta, tau: float, nu: float):
    return -np.logaddexp(0.0, -(np.asarray(delta, dtype=float) - tau) / nu)


def log_repulsion(d, tau: float, nu: float) -> float:
    """log h(d) = log of the minimum over pairs of g(|d_s - d_j|); 0 for a single component."""
    d = np.asarray(d, dtype=float)
    if d.size < 2:
        return 0.0
    gaps = np.abs(d[:, None] - d[None, :])[np.triu_indices(d.size, 1)]
    return float(np.min(log_sigmoid_g(gaps, tau, nu)))


def gamma_log_pdf(x, a: float, b: float):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = a * math.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x
    return np.where(x > 0, out, -np.inf)


def log_gamma_cdf(x: float, a: float, b: float) -> float:
    """log P(Gamma(a, rate=b) <= x), stable deep in the lower tail."""
    val = special.gammainc(a, b * x)
    if val > 1e-300:
        return math.log(val)
    # lower tail: P ~ f(x) / (b - (a-1)/x) when the density is still rising at x
    slope = (a - 1.0) / x - b
    logf = float(gamma_log_pdf(x, a, b))
    if slope > 0:
        return logf - math.log(slope)
    # small-x regime: F(x) ~ x f(x) / a
    return logf + math.log(x) - math.log(a)


def truncated_gamma_log_pdf(x, a: float, b: float, cap: float):
    x = np.asarray(x, dtype=float)
    out = gamma_log_pdf(x, a, b) - log_gamma_cdf(cap, a, b)
    return np.where(x < cap, out, -np.inf)


def prior_log_density(d_vec, spec: PriorSpec, at_cap=None) -> float:
    """Joint log prior of the component IDs.

    For the spike variant ``at_cap`` flags components sitting on the point
    mass at ``D_cap``; those contribute ``log(1 - rho_hat)`` against the
    counting part of the mixed measure. The repulsive variant is returned
    without its normalising constant.
    """
    d = np.asarray(d_vec, dtype=float)
    if spec.variant == "plain":
        return float(np.sum(gamma_log_pdf(d, spec.a, spec.b)))
    cap = spec.D_cap
    if spec.variant == "truncated":
        return float(np.sum(truncated_gamma_log_pdf(d, spec.a, spec.b, cap)))
    if spec.variant == "spike":
        flags = np.zeros(d.shape, dtype=bool) if at_cap is None else np.asarray(at_cap, dtype=bool)
        slab = math.log(spec.rho_hat) + truncated_gamma_log_pdf(d, spec.a, spec.b, cap)
        spike = np.where(d == cap, math.log1p(-spec.rho_hat), -np.inf)
        return float(np.sum(np.where(flags, spike, slab)))
    if spec.g0_truncated:
        base = truncated_gamma_log_pdf(d, spec.a, spec.b, cap)
    else:
        base = gamma_log_pdf(d, spec.a, spec.b)
    return float(np.sum(base) + log_repulsion(d, spec.tau, spec.nu))
