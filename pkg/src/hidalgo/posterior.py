"""Post-processing of traces: per-observation IDs, co-clustering, partitions, K choice, tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import stats
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform
from sklearn.metrics import calinski_harabasz_score, silhouette_score


class EmptyTraceError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass
class IdEstimates:
    mean_id: np.ndarray
    median_id: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def credible(self) -> np.ndarray:
        return np.column_stack([self.lower, self.upper])


def _check_trace(trace):
    if trace is None or trace.n_retained == 0:
        raise EmptyTraceError("trace holds no retained sweeps")


def per_observation_id(trace, level: float = 0.95) -> IdEstimates:
    """Mean, median and central credible interval of the ID routed to each point via its label.

    Only the value of d attached to the point's label at each sweep is used,
    so per-sweep relabelling of components has no effect.
    """
    _check_trace(trace)
    chains = trace.assigned_d()
    tail = (1.0 - level) / 2.0
    lower, median, upper = np.quantile(chains, [tail, 0.5, 1.0 - tail], axis=0)
    return IdEstimates(chains.mean(axis=0), median, lower, upper)


def coclustering_matrix(trace) -> np.ndarray:
    """Fraction of retained sweeps in which each pair shares a label."""
    _check_trace(trace)
    z = np.asarray(trace.z)
    T, N = z.shape
    psm = np.zeros((N, N))
    for k in np.unique(z):
        onehot = (z == k).astype(np.float64)
        psm += onehot.T @ onehot
    psm /= T
    np.fill_diagonal(psm, 1.0)
    return psm


# ---------------------------------------------------------------------------
# partition losses


def _relabel(labels) -> np.ndarray:
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.astype(np.int64)


def _contingency(c, Z):
    """Contingency tables of partition ``c`` against every row of ``Z`` (shape T x Kc x Kz)."""
    c = _relabel(c)
    Kc = int(c.max()) + 1
    Z = np.asarray(Z, dtype=np.int64)
    T, N = Z.shape
    Kz = int(Z.max()) + 1
    flat = (np.arange(T)[:, None] * Kc + c[None, :]) * Kz + Z
    return np.bincount(flat.ravel(), minlength=T * Kc * Kz).reshape(T, Kc, Kz).astype(np.float64)


def _pairs(x):
    return x * (x - 1.0) / 2.0


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    np.log(x, out=out, where=x > 0)
    return x * out


def binder_loss(c, z) -> float:
    """Number of pairs on which the two partitions disagree (unit costs)."""
    table = _contingency(c, np.asarray(z)[None, :])[0]
    return float(_pairs(table.sum(1)).sum() + _pairs(table.sum(0)).sum() - 2 * _pairs(table).sum())


def vi_distance(c, z) -> float:
    """Variation of information (natural log)."""
    table = _contingency(c, np.asarray(z)[None, :])[0]
    N = table.sum()
    return float((2 * _xlogx(table).sum() - _xlogx(table.sum(1)).sum() - _xlogx(table.sum(0)).sum()) / -N)


def expected_losses(candidate, Z):
    """Mean Binder loss and mean VI of ``candidate`` against the sampled partitions ``Z``."""
    tables = _contingency(candidate, Z)
    rows = tables.sum(axis=2)
    cols = tables.sum(axis=1)
    N = Z.shape[1]
    binder = _pairs(rows).sum(1) + _pairs(cols).sum(1) - 2 * _pairs(tables).sum(axis=(1, 2))
    vi = (_xlogx(rows).sum(1) + _xlogx(cols).sum(1) - 2 * _xlogx(tables).sum(axis=(1, 2))) / N
    return float(binder.mean()), float(vi.mean())


@numba.njit(cache=True, nogil=True)
def _draw_losses(c, Kc, Z, Kz, col_pairs, col_xlogx):
    """Per-draw Binder loss and N * VI of candidate ``c`` against each row of ``Z``."""
    T, N = Z.shape
    binder = np.empty(T)
    vi = np.empty(T)
    rows = np.zeros(Kc)
    for i in range(N):
        rows[c[i]] += 1.0
    row_pairs = 0.0
    row_xlogx = 0.0
    for k in range(Kc):
        row_pairs += rows[k] * (rows[k] - 1.0) / 2.0
        if rows[k] > 0:
            row_xlogx += rows[k] * math.log(rows[k])
    table = np.zeros(Kc * Kz)
    for t in range(T):
        for i in range(N):
            table[c[i] * Kz + Z[t, i]] += 1.0
        cell_pairs = 0.0
        cell_xlogx = 0.0
        for j in range(Kc * Kz):
            n = table[j]
            if n > 0:
                cell_pairs += n * (n - 1.0) / 2.0
                cell_xlogx += n * math.log(n)
                table[j] = 0.0
        binder[t] = row_pairs + col_pairs[t] - 2.0 * cell_pairs
        vi[t] = row_xlogx + col_xlogx[t] - 2.0 * cell_xlogx
    return binder, vi


@numba.njit(cache=True, nogil=True)
def _draw_candidate_losses(Z, picks, K, col_pairs, col_xlogx):
    """Expected Binder loss and VI of the draws ``Z[picks]`` against all of ``Z``.

    Consecutive picks differ in few sites, so the per-draw contingency tables
    are updated in place rather than rebuilt; the loss sums are then taken
    over the integer tables, so no rounding accumulates.
    """
    T, N = Z.shape
    M = picks.size
    out = np.empty((M, 2))
    table = np.zeros((T, K, K), dtype=np.int64)
    prev = Z[picks[0]].copy()
    for t in range(T):
        for i in range(N):
            table[t, prev[i], Z[t, i]] += 1
    rows = np.zeros(K)
    for m in range(M):
        cur = Z[picks[m]]
        for i in range(N):
            if cur[i] != prev[i]:
                for t in range(T):
                    table[t, prev[i], Z[t, i]] -= 1
                    table[t, cur[i], Z[t, i]] += 1
                prev[i] = cur[i]
        rows[:] = 0.0
        for i in range(N):
            rows[cur[i]] += 1.0
        row_pairs = 0.0
        row_xlogx = 0.0
        for k in range(K):
            row_pairs += rows[k] * (rows[k] - 1.0) / 2.0
            if rows[k] > 0:
                row_xlogx += rows[k] * math.log(rows[k])
        binder = 0.0
        vi = 0.0
        for t in range(T):
            cell_pairs = 0.0
            cell_xlogx = 0.0
            for a in range(K):
                for b in range(K):
                    n = float(table[t, a, b])
                    if n > 0:
                        cell_pairs += n * (n - 1.0) / 2.0
                        cell_xlogx += n * math.log(n)
            binder += row_pairs + col_pairs[t] - 2.0 * cell_pairs
            vi += row_xlogx + col_xlogx[t] - 2.0 * cell_xlogx
        out[m, 0] = binder / T
        out[m, 1] = vi / T / N
    return out


def _draw_side(Z):
    Z = np.ascontiguousarray(_relabel(np.asarray(Z).ravel()).reshape(np.shape(Z)))
    Kz = int(Z.max()) + 1
    cols = np.stack([np.bincount(row, minlength=Kz) for row in Z]).astype(np.float64)
    return Z, Kz, _pairs(cols).sum(1), _xlogx(cols).sum(1)


def _expected_losses_all(cands, Z):
    # same quantities as expected_losses, with the draw-side sums shared across candidates
    Z, Kz, col_pairs, col_xlogx = _draw_side(Z)
    N = Z.shape[1]
    out = np.empty((len(cands), 2))
    for j, c in enumerate(cands):
        c = _relabel(c)
        binder, vi = _draw_losses(c, int(c.max()) + 1, Z, Kz, col_pairs, col_xlogx)
        out[j] = binder.mean(), vi.mean() / N
    return out


def dendrogram_cuts(psm, max_clusters: int = 10) -> list:
    N = psm.shape[0]
    link = average_linkage(psm)
    cuts = []
    for k in range(1, min(max_clusters, N) + 1):
        cuts.append(_relabel(hierarchy.fcluster(link, t=k, criterion="maxclust")))
    return cuts


def _candidates_with_sources(psm, trace, max_clusters):
    # (canonical candidates, index of the first draw for each sampled one)
    seen, picks = {}, []
    for t, labels in enumerate(np.asarray(trace.z)):
        canon = _canonical(labels)
        key = canon.tobytes()
        if key not in seen:
            seen[key] = canon
            picks.append(t)
    for labels in dendrogram_cuts(psm, max_clusters):
        canon = _canonical(labels)
        seen.setdefault(canon.tobytes(), canon)
    return list(seen.values()), np.array(picks, dtype=np.int64)


def candidate_partitions(psm, trace, max_clusters: int = 10) -> list:
    """Distinct sampled partitions followed by the average-linkage cuts, canonically relabelled."""
    return _candidates_with_sources(psm, trace, max_clusters)[0]


def _canonical(labels) -> np.ndarray:
    # first-appearance order, so label permutations map to one representative
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(order.size, dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[_relabel(labels)]


def point_partition(psm, trace, loss: str = "binder", max_clusters: int = 10, return_table=False):
    """Candidate partition minimising the posterior expected Binder or VI loss.

    Candidates are all distinct sampled partitions plus the cuts of the
    average-linkage dendrogram of ``1 - psm`` into 1..``max_clusters`` groups.
    Expected losses are averaged over the retained sweeps of ``trace``.
    Earlier candidates win exact ties.
    """
    if loss not in ("binder", "vi"):
        raise ValueError(f"loss must be 'binder' or 'vi', got {loss!r}")
    _check_trace(trace)
    cands, picks = _candidates_with_sources(psm, trace, max_clusters)
    Zr, Kz, col_pairs, col_xlogx = _draw_side(trace.z)
    table = np.empty((len(cands), 2))
    table[: picks.size] = _draw_candidate_losses(Zr, picks, Kz, col_pairs, col_xlogx)
    if len(cands) > picks.size:
        table[picks.size:] = _expected_losses_all(cands[picks.size:], Zr)
    col = 0 if loss == "binder" else 1
    best = int(np.argmin(table[:, col]))
    if return_table:
        return cands[best], cands, table
    return cands[best]


# ---------------------------------------------------------------------------
# k-means on the per-observation IDs


def _kmeans_1d(x, k, max_iter=300):
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    history = []
    labels = np.zeros(x.size, dtype=np.int64)
    for _ in range(max_iter):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        history.append(float(np.sum((x - centers[labels]) ** 2)))
        new = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if members.size:
                new[j] = members.mean()
        history.append(float(np.sum((x - new[labels]) ** 2)))
        if np.array_equal(new, centers):
            break
        centers = new
    # relabel clusters by ascending centre
    order = np.argsort(centers, kind="stable")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return rank[labels], centers[order], history


def kmeans_id_clusters(median_id, g_range=range(2, 9)):
    """1-D k-means on per-observation IDs with the group count chosen by Silhouette.

    Returns ``(labels, chosen_G, table)`` where ``table`` has one entry per
    G with the Silhouette and Calinski-Harabasz values (and the
    within-cluster sum of squares trajectory).
    """
    x = np.asarray(median_id, dtype=float)
    g_range = sorted(set(int(g) for g in g_range))
    if not g_range or g_range[0] < 2:
        raise ValueError("group counts must be >= 2")
    if x.size <= g_range[-1]:
        raise ValueError(f"need more than {g_range[-1]} values, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateDataError("all values are identical; no clustering is possible")
    table = []
    best = None
    for g in g_range:
        labels, centers, history = _kmeans_1d(x, g)
        n_groups = np.unique(labels).size
        if n_groups < 2:
            sil, ch = float("nan"), float("nan")
        else:
            sil = float(silhouette_score(x[:, None], labels))
            ch = float(calinski_harabasz_score(x[:, None], labels))
        table.append({"G": g, "silhouette": sil, "calinski_harabasz": ch,
                      "centers": centers.tolist(), "wcss": history})
        if not math.isnan(sil) and (best is None or sil > best[1]):
            best = (g, sil, labels)
    if best is None:
        raise DegenerateDataError("no group count produced two non-empty clusters")
    return best[2], best[0], table


# ---------------------------------------------------------------------------
# choice of K


def select_K(traces: dict):
    """K with the largest mean retained log-posterior; ties go to the smaller K.

    Returns ``(K_star, table)`` with ``table`` mapping each K to its mean.
    """
    if not traces:
        raise ValueError("no traces given")
    sums = {t.data_checksum for t in traces.values()}
    if len(sums) > 1:
        raise ValueError("traces were computed on different data (checksums differ)")
    table = {}
    for K, trace in traces.items():
        _check_trace(trace)
        table[int(K)] = float(np.mean(trace.log_posterior))
    best = max(sorted(table), key=lambda k: (table[k], -k))
    return best, table


# ---------------------------------------------------------------------------
# Mann-Whitney / Wilcoxon rank-sum


@dataclass
class MannWhitneyResult:
    U: float
    p: float
    method: str


def _u_distribution(n1, n2):
    """Counts of each U value over all C(n1+n2, n1) arrangements (no ties)."""
    # f[i][j] = counts for sizes (i, j); recurrence on the largest observation
    f = {(0, j): np.array([1], dtype=object) for j in range(n2 + 1)}
    for i in range(1, n1 + 1):
        f[(i, 0)] = np.array([1], dtype=object)
        for j in range(1, n2 + 1):
            a = f[(i - 1, j)]  # largest is from x: adds j to U
            b = f[(i, j - 1)]
            out = np.zeros(i * j + 1, dtype=object)
            out[j:j + a.size] += a
            out[: b.size] += b
            f[(i, j)] = out
    return f[(n1, n2)]


def mann_whitney(xs, ys, alternative: str = "two-sided", method: str = "auto", exact_limit: int = 16):
    """Rank-sum test; U counts pairs with x > y (ties count one half).

    ``method="auto"`` uses the exact null distribution when the pooled
    size is at most ``exact_limit`` and there are no ties, else the normal
    approximation with tie and continuity corrections.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n1, n2 = x.size, y.size
    pooled = np.concatenate([x, y])
    ranks = stats.rankdata(pooled)
    U = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    has_ties = np.unique(pooled).size < pooled.size
    if method == "auto":
        method = "exact" if (n1 + n2 <= exact_limit and not has_ties) else "normal"
    if method == "exact":
        if has_ties:
            raise ValueError("exact null distribution requires tie-free samples")
        counts = _u_distribution(n1, n2)
        total = sum(counts)
        u = int(round(U))
        upper = sum(counts[u:]) / total
        lower = sum(counts[: u + 1]) / total
        if alternative == "greater":
            p = upper
        elif alternative == "less":
            p = lower
        else:
            p = min(1.0, 2 * min(upper, lower))
        return MannWhitneyResult(U, float(p), "exact")
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    n = n1 + n2
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    mean = n1 * n2 / 2.0
    if var <= 0:
        return MannWhitneyResult(U, 1.0, "normal")
    sd = math.sqrt(var)
    upper = float(stats.norm.sf((U - mean - 0.5) / sd))
    lower = float(stats.norm.cdf((U - mean + 0.5) / sd))
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2 * min(upper, lower))
    return MannWhitneyResult(U, p, "normal")


def pairwise_greater(groups: dict, order=None):
    """One-sided tests of each later group against each earlier one, as a nested dict."""
    names = list(order or groups)
    out = {}
    for i, row in enumerate(names):
        for col in names[:i]:
            if len(groups[row]) and len(groups[col]):
                res = mann_whitney(groups[row], groups[col], "greater")
                out.setdefault(row, {})[col] = {"U": res.U, "p": res.p, "method": res.method}
    return out


# ---------------------------------------------------------------------------
# heatmap ordering


def average_linkage(psm):
    dist = 1.0 - np.asarray(psm, dtype=float)
    dist = (dist + dist.T) / 2.0
    np.fill_diagonal(dist, 0.0)
    dist = np.clip(dist, 0.0, None)
    return hierarchy.linkage(squareform(dist, checks=False), method="average")


def heatmap_order(psm) -> np.ndarray:
    """Leaf order of the average-linkage dendrogram of ``1 - psm``."""
    psm = np.asarray(psm)
    if psm.shape[0] == 1:
        return np.zeros(1, dtype=int)
    return hierarchy.leaves_list(average_linkage(psm))



def success_by_cluster(labels, outcomes) -> list:
    """Per-cluster shot counts and success proportion, clusters in ascending label order."""
    labels = np.asarray(labels)
    outcomes = np.asarray(outcomes, dtype=int)
    if labels.shape != outcomes.shape:
        raise ValueError("labels and outcomes differ in length")
    rows = []
    for k in np.unique(labels):
        mask = labels == k
        made = int(outcomes[mask].sum())
        rows.append({"cluster": int(k), "n": int(mask.sum()), "made": made, "proportion": made / int(mask.sum())})
    return rows
