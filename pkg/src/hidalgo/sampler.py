"""Metropolis-within-Gibbs sampler over labels, component IDs, weights and zeta."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import special

from .model import (
    PriorSpec,
    log_gamma_cdf,
    log_normalizer_table,
    log_repulsion,
    n_in,
    prior_log_density,
)



class NonFiniteLogPosterior(FloatingPointError):
    def __init__(self, sweep, value):
        self.sweep = sweep
        super().__init__(f"log-posterior is {value} at sweep {sweep}")


@dataclass
class SamplerConfig:
    K: int = 2
    n_sweeps: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    prior: PriorSpec = field(default_factory=PriorSpec)
    adjacency_on: bool = True
    q: int = 3
    random_scan: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not self.n_sweeps > self.burn_in >= 0:
            raise ValueError(f"need n_sweeps > burn_in >= 0, got {self.n_sweeps}, {self.burn_in}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_retained(self) -> int:
        return (self.n_sweeps - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "n_sweeps": self.n_sweeps,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": int(self.seed),
            "prior": self.prior.to_dict(),
            "adjacency_on": self.adjacency_on,
            "q": self.q,
            "random_scan": self.random_scan,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SamplerConfig":
        payload = dict(payload)
        payload["prior"] = PriorSpec.from_dict(payload.get("prior", {}))
        return cls(**payload)


@dataclass
class ChainState:
    z: np.ndarray
    d: np.ndarray
    p: np.ndarray
    zeta: float
    at_cap: np.ndarray
    sweep: int = 0

    @property
    def K(self) -> int:
        return self.d.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.K)

    def copy(self) -> "ChainState":
        return ChainState(self.z.copy(), self.d.copy(), self.p.copy(), self.zeta, self.at_cap.copy(), self.sweep)


@dataclass
class PosteriorTrace:
    """Retained sweeps. Labels in ``z`` are 0-based here."""

    z: np.ndarray
    d: np.ndarray
    p: np.ndarray
    zeta: np.ndarray
    log_posterior: np.ndarray
    sweeps: np.ndarray
    config: SamplerConfig
    data_checksum: str = ""
    parts: np.ndarray | None = None
    acceptance: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.z.shape[0]

    @property
    def N(self) -> int:
        return self.z.shape[1]

    @property
    def K(self) -> int:
        return self.d.shape[1]

    def assigned_d(self) -> np.ndarray:
        """T x N matrix of the ID carried by each observation's component at each sweep."""
        return np.take_along_axis(self.d, self.z, axis=1)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.z.astype(np.int64), self.d, self.p, self.zeta, self.log_posterior):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.data_checksum.encode())
        return h.hexdigest()

    @classmethod
    def concatenate(cls, traces) -> "PosteriorTrace":
        traces = list(traces)
        if not traces:
            raise ValueError("no traces to combine")
        sums = {t.data_checksum for t in traces}
        if len(sums) > 1:
            raise ValueError("traces were computed on different data")
        return cls(
            z=np.concatenate([t.z for t in traces]),
            d=np.concatenate([t.d for t in traces]),
            p=np.concatenate([t.p for t in traces]),
            zeta=np.concatenate([t.zeta for t in traces]),
            log_posterior=np.concatenate([t.log_posterior for t in traces]),
            sweeps=np.concatenate([t.sweeps for t in traces]),
            config=traces[0].config,
            data_checksum=traces[0].data_checksum,
        )


def data_checksum(mu, adj_rows) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mu, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(adj_rows, dtype=np.int64).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# labels


@numba.njit(cache=True, nogil=True)
def _site_log_weights(i, z, counts, log_p, log_d, d, log_mu, nn_rows, rev_indptr, rev_indices,
                      log_z_table, log_odds, adjacency_on, out):
    # counts must already exclude site i
    K = out.shape[0]
    for k in range(K):
        out[k] = log_p[k] + log_d[k] - (d[k] + 1.0) * log_mu[i]
    if adjacency_on:
        q = nn_rows.shape[1]
        for j in range(q):
            out[z[nn_rows[i, j]]] += log_odds
        for r in range(rev_indptr[i], rev_indptr[i + 1]):
            out[z[rev_indices[r]]] += log_odds
        for k in range(K):
            n = counts[k]
            out[k] -= (n + 1) * log_z_table[n + 1] - n * log_z_table[n]


@numba.njit(cache=True, nogil=True)
def _scan_labels(z, counts, log_p, log_d, d, log_mu, nn_rows, rev_indptr, rev_indices,
                 log_z_table, log_odds, adjacency_on, order, uniforms):
    K = log_p.shape[0]
    w = np.empty(K)
    for t in range(order.shape[0]):
        i = order[t]
        counts[z[i]] -= 1
        _site_log_weights(i, z, counts, log_p, log_d, d, log_mu, nn_rows, rev_indptr, rev_indices,
                          log_z_table, log_odds, adjacency_on, w)
        top = w.max()
        total = 0.0
        for k in range(K):
            w[k] = math.exp(w[k] - top)
            total += w[k]
        target = uniforms[t] * total
        acc = 0.0
        new = K - 1
        for k in range(K):
            acc += w[k]
            if target < acc:
                new = k
                break
        z[i] = new
        counts[new] += 1


class _Workspace:
    """Per-chain constant arrays shared by the label updates."""

    def __init__(self, mu, adj_rows, q):
        self.log_mu = np.log(np.asarray(mu, dtype=np.float64))
        self.nn_rows = np.ascontiguousarray(np.asarray(adj_rows, dtype=np.int64)[:, :q])
        N = self.nn_rows.shape[0]
        src = np.repeat(np.arange(N, dtype=np.int64), q)
        dst = self.nn_rows.ravel()
        order = np.argsort(dst, kind="stable")
        self.rev_indices = src[order]
        self.rev_indptr = np.zeros(N + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=N), out=self.rev_indptr[1:])
        self.N = N
        self.q = q
        self._tables = {}

    def table(self, zeta):
        # the current and the proposed zeta are the only values in play
        if zeta not in self._tables:
            if len(self._tables) >= 2:
                self._tables.pop(next(iter(self._tables)))
            self._tables[zeta] = log_normalizer_table(zeta, self.N, self.q)
        return self._tables[zeta]


def full_conditional(i, state: ChainState, mu, adj_rows, adjacency_on=True) -> np.ndarray:
    """Normalised probabilities of each label for site ``i`` given all other labels."""
    q = np.asarray(adj_rows).shape[1]
    ws = _Workspace(mu, adj_rows, q)
    counts = state.counts().astype(np.int64)
    counts[state.z[i]] -= 1
    out = np.empty(state.K)
    with np.errstate(divide="ignore"):
        log_p = np.log(state.p)
    _site_log_weights(i, state.z.astype(np.int64), counts, log_p, np.log(state.d), state.d,
                      ws.log_mu, ws.nn_rows, ws.rev_indptr, ws.rev_indices, ws.table(state.zeta),
                      math.log(state.zeta) - math.log1p(-state.zeta), adjacency_on, out)
    out = np.exp(out - out.max())
    return out / out.sum()


def update_assignments(mu, adj_rows, state: ChainState, spec: PriorSpec, rng, adjacency_on=True,
                       random_scan=False, workspace=None) -> np.ndarray:
    """One sequential single-site Gibbs scan over the labels (in place on ``state.z``)."""
    ws = workspace or _Workspace(mu, adj_rows, np.asarray(adj_rows).shape[1])
    N = ws.N
    order = rng.permutation(N) if random_scan else np.arange(N)
    uniforms = rng.random(N)
    if state.K == 1:
        return state.z
    counts = np.bincount(state.z, minlength=state.K).astype(np.int64)
    with np.errstate(divide="ignore"):
        log_p = np.log(state.p)
    z = state.z.astype(np.int64, copy=False)
    _scan_labels(z, counts, log_p, np.log(state.d), state.d, ws.log_mu, ws.nn_rows,
                 ws.rev_indptr, ws.rev_indices, ws.table(state.zeta),
                 math.log(state.zeta) - math.log1p(-state.zeta), adjacency_on,
                 order.astype(np.int64), uniforms)
    state.z = z
    return z


# ---------------------------------------------------------------------------
# weights and component IDs


def update_weights(z, c, rng, K=None) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    K = K or c.size
    counts = np.bincount(np.asarray(z), minlength=K)
    return rng.dirichlet(c + counts)


def sample_truncated_gamma(shape, rate, cap, rng) -> float:
    """Inverse-CDF draw from Gamma(shape, rate) restricted to (0, cap)."""
    mass = special.gammainc(shape, rate * cap)
    if mass > 1e-300:
        u = rng.random() * mass
        x = special.gammaincinv(shape, u) / rate
        if 0 < x < cap:
            return float(x)
    else:
        rng.random()
    # all the mass sits just below the cap: the density is close to exponential there
    slope = (shape - 1.0) / cap - rate
    x = cap - rng.exponential(1.0 / slope) if slope > 0 else cap * rng.random()
    return float(min(max(x, np.nextafter(0.0, 1.0)), np.nextafter(cap, 0.0)))


def _cluster_stats(log_mu, z, K):
    N_k = np.bincount(z, minlength=K)
    S_k = np.bincount(z, weights=log_mu, minlength=K)
    return N_k, S_k


def _draw_base(shape, rate, spec: PriorSpec, truncated, rng):
    if truncated:
        return sample_truncated_gamma(shape, rate, spec.D_cap, rng)
    return float(rng.gamma(shape, 1.0 / rate))


def update_d(mu, z, spec: PriorSpec, current_d, rng, at_cap=None, stats=None, log_mu=None):
    """Draw new component IDs from their full conditional.

    Returns ``(d, at_cap, accepted)`` where ``accepted`` counts repulsive
    Metropolis-Hastings acceptances (``None`` for the other variants).
    """
    d = np.array(current_d, dtype=float)
    K = d.size
    flags = np.zeros(K, dtype=bool) if at_cap is None else np.array(at_cap, dtype=bool)
    if log_mu is None:
        log_mu = np.log(np.asarray(mu, dtype=float))
    N_k, S_k = stats if stats is not None else _cluster_stats(log_mu, np.asarray(z), K)
    a, b = spec.a, spec.b
    accepted = None
    if spec.variant == "plain":
        for k in range(K):
            d[k] = rng.gamma(a + N_k[k], 1.0 / (b + S_k[k]))
    elif spec.variant == "truncated":
        for k in range(K):
            d[k] = sample_truncated_gamma(a + N_k[k], b + S_k[k], spec.D_cap, rng)
    elif spec.variant == "spike":
        cap = spec.D_cap
        base = log_gamma_cdf(cap, a, b)
        for k in range(K):
            shape, rate = a + N_k[k], b + S_k[k]
            log_ml_spike = N_k[k] * math.log(cap) - cap * S_k[k]
            log_ml_slab = (a * math.log(b) - special.gammaln(a) + special.gammaln(shape)
                           - shape * math.log(rate) + log_gamma_cdf(cap, shape, rate) - base)
            log_odds = (math.log1p(-spec.rho_hat) + log_ml_spike) - (math.log(spec.rho_hat) + log_ml_slab)
            flags[k] = rng.random() < special.expit(log_odds)
            d[k] = cap if flags[k] else sample_truncated_gamma(shape, rate, cap, rng)
    else:
        accepted = 0
        current = log_repulsion(d, spec.tau, spec.nu)
        for k in range(K):
            proposal = d.copy()
            proposal[k] = _draw_base(a + N_k[k], b + S_k[k], spec, spec.g0_truncated, rng)
            new = log_repulsion(proposal, spec.tau, spec.nu)
            if math.log(rng.random()) < new - current:
                d, current = proposal, new
                accepted += 1
    return d, flags, accepted


# ---------------------------------------------------------------------------
# zeta


def _zeta_log_target(zeta, ll_adj, spec: PriorSpec):
    # density of eta = logit((zeta - 0.5) / 0.5): Beta prior times the Jacobian
    u = (zeta - 0.5) / 0.5
    f1, f0 = spec.zeta_beta
    return ll_adj + f1 * math.log(u) + f0 * math.log1p(-u)


def _adjacency_ll(ws: _Workspace, z, zeta, m=None, counts=None):
    m = n_in(ws.nn_rows, z) if m is None else m
    counts = np.bincount(z) if counts is None else counts
    table = ws.table(zeta)
    return float(np.sum(m) * math.log(zeta) + np.sum(ws.q - m) * math.log1p(-zeta)
                 - np.sum(table[counts[z]]))


def update_zeta(adj_rows, z, spec: PriorSpec, zeta, rng, workspace=None):
    """Random-walk Metropolis on the logit of (zeta - 0.5) / 0.5.

    Returns ``(zeta, accepted)``. A no-op in fixed mode.
    """
    if spec.zeta_mode == "fixed":
        return zeta, False
    rows = np.asarray(adj_rows)
    ws = workspace or _Workspace(np.ones(rows.shape[0]), rows, rows.shape[1])
    eta = special.logit((zeta - 0.5) / 0.5)
    eta_new = eta + spec.zeta_step * rng.standard_normal()
    zeta_new = 0.5 + 0.5 * float(special.expit(eta_new))
    log_u = math.log(rng.random())
    if not 0.5 < zeta_new < 1.0:
        return zeta, False
    m = n_in(ws.nn_rows, z)
    counts = np.bincount(z)
    cur = _zeta_log_target(zeta, _adjacency_ll(ws, z, zeta, m, counts), spec)
    new = _zeta_log_target(zeta_new, _adjacency_ll(ws, z, zeta_new, m, counts), spec)
    if log_u < new - cur:
        return zeta_new, True
    return zeta, False


# ---------------------------------------------------------------------------
# log posterior


def log_posterior_parts(state: ChainState, mu, adj_rows, spec: PriorSpec, adjacency_on=True,
                        workspace=None) -> np.ndarray:
    """(likelihood, adjacency, prior) parts of the log posterior.

    The likelihood is the Pareto density of each ratio under its assigned
    component. The prior part holds the label probabilities log p_{z_i},
    the normalised Dirichlet density of p, the prior on the IDs (the
    repulsive one without its normalising constant) and, when zeta is
    sampled, the rescaled Beta density of zeta.
    """
    z = np.asarray(state.z)
    log_mu = workspace.log_mu if workspace is not None else np.log(np.asarray(mu, dtype=float))
    dz = state.d[z]
    lik = float(np.sum(np.log(dz) - (dz + 1.0) * log_mu))
    adj = 0.0
    if adjacency_on:
        ws = workspace or _Workspace(mu, adj_rows, np.asarray(adj_rows).shape[1])
        adj = _adjacency_ll(ws, z, state.zeta)
    c = spec.concentrations(state.K)
    with np.errstate(divide="ignore"):
        log_p = np.log(state.p)
    prior = float(np.sum(log_p[z]))
    prior += float(special.gammaln(c.sum()) - special.gammaln(c).sum() + np.sum((c - 1.0) * log_p))
    prior += prior_log_density(state.d, spec, state.at_cap)
    if spec.zeta_mode == "sampled":
        f1, f0 = spec.zeta_beta
        u = (state.zeta - 0.5) / 0.5
        prior += float((f1 - 1) * math.log(u) + (f0 - 1) * math.log1p(-u)
                       - special.betaln(f1, f0) + math.log(2.0))
    return np.array([lik, adj, prior])


def log_posterior(state: ChainState, mu, adj_rows, spec: PriorSpec, adjacency_on=True) -> float:
    return float(np.sum(log_posterior_parts(state, mu, adj_rows, spec, adjacency_on)))


# ---------------------------------------------------------------------------
# driver


def initial_state(N, config: SamplerConfig, rng) -> ChainState:
    spec = config.prior
    K = config.K
    z = rng.integers(0, K, size=N).astype(np.int64)
    d = np.empty(K)
    flags = np.zeros(K, dtype=bool)
    for k in range(K):
        truncated = spec.variant in ("truncated", "spike") or (spec.variant == "repulsive" and spec.g0_truncated)
        d[k] = _draw_base(spec.a, spec.b, spec, truncated, rng)
    if spec.variant == "repulsive" and K > 1:
        # start from well-spread IDs so the repulsion factor is not negligible
        d = np.sort(d) + spec.tau * np.arange(K)
        if spec.g0_truncated:
            d = np.minimum(d, spec.D_cap * (1 - 1e-9))
    p = np.full(K, 1.0 / K)
    return ChainState(z=z, d=d, p=p, zeta=spec.zeta, at_cap=flags)


def run_chain(mu, adj_rows, config: SamplerConfig, state: ChainState | None = None) -> PosteriorTrace:
    """Run one chain. Each sweep updates p, then d, then z, then zeta."""
    adj_rows = getattr(adj_rows, "rows", adj_rows)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 1):
        raise ValueError("two-NN ratios must be >= 1")
    adj_rows = np.asarray(adj_rows, dtype=np.int64)
    if adj_rows.shape[0] != mu.size:
        raise ValueError("mu and adjacency describe different numbers of points")
    if adj_rows.shape[1] < config.q:
        raise ValueError(f"adjacency holds {adj_rows.shape[1]} neighbours, q={config.q} requested")
    adj_rows = adj_rows[:, : config.q]
    spec = config.prior
    rng = np.random.default_rng(config.seed)
    N, K = mu.size, config.K
    ws = _Workspace(mu, adj_rows, config.q)
    c = spec.concentrations(K)
    state = state.copy() if state is not None else initial_state(N, config, rng)

    T = config.n_retained
    out_z = np.empty((T, N), dtype=np.int64)
    out_d = np.empty((T, K))
    out_p = np.empty((T, K))
    out_zeta = np.empty(T)
    out_lp = np.empty(T)
    out_parts = np.empty((T, 3))
    out_sweep = np.empty(T, dtype=np.int64)
    mh_d = 0
    mh_zeta = 0
    slot = 0
    for sweep in range(config.n_sweeps):
        state.p = update_weights(state.z, c, rng, K)
        stats = _cluster_stats(ws.log_mu, state.z, K)
        state.d, state.at_cap, acc = update_d(mu, state.z, spec, state.d, rng, state.at_cap, stats, ws.log_mu)
        mh_d += acc or 0
        update_assignments(mu, adj_rows, state, spec, rng, config.adjacency_on, config.random_scan, ws)
        if config.adjacency_on:
            state.zeta, acc_z = update_zeta(adj_rows, state.z, spec, state.zeta, rng, ws)
            mh_zeta += acc_z
        state.sweep = sweep + 1
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thin == 0 and slot < T:
            parts = log_posterior_parts(state, mu, adj_rows, spec, config.adjacency_on, ws)
            total = float(np.sum(parts))
            if not math.isfinite(total):
                raise NonFiniteLogPosterior(sweep + 1, total)
            out_z[slot] = state.z
            out_d[slot] = state.d
            out_p[slot] = state.p
            out_zeta[slot] = state.zeta
            out_lp[slot] = total
            out_parts[slot] = parts
            out_sweep[slot] = sweep + 1
            slot += 1
    acceptance = {}
    if spec.variant == "repulsive":
        acceptance["d"] = mh_d / (config.n_sweeps * K)
    if spec.zeta_mode == "sampled" and config.adjacency_on:
        acceptance["zeta"] = mh_zeta / config.n_sweeps
    return PosteriorTrace(out_z, out_d, out_p, out_zeta, out_lp, out_sweep, config,
                          data_checksum(mu, adj_rows), out_parts, acceptance)


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    """Per-chain 64-bit seeds: hash of (seed, chain index) via SeedSequence."""
    return [int(np.random.SeedSequence([int(seed), i]).generate_state(1, np.uint64)[0]) for i in range(n_chains)]


def gamma_posterior_moments(a, b, N_k, S_k):
    shape, rate = a + N_k, b + S_k
    return shape / rate, shape / rate**2

