"""Exact nearest-neighbour structure, the two-NN ratio and the q-NN adjacency."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class DuplicatePointsError(ValueError):
    """Raised when a point has a first neighbour at distance zero."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=int)
        shown = ", ".join(str(r) for r in self.rows[:10])
        more = "" if self.rows.size <= 10 else f" (+{self.rows.size - 10} more)"
        super().__init__(
            f"{self.rows.size} point(s) have a duplicate at distance 0: rows {shown}{more}; "
            "remove duplicates or enable jitter"
        )


@dataclass(frozen=True)
class Dataset:
    """N observations in R^D with row labels."""

    points: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-D matrix, got ndim={pts.ndim}")
        if pts.shape[0] < 3:
            raise ValueError(f"need at least 3 observations, got {pts.shape[0]}")
        if pts.shape[1] < 1:
            raise ValueError("need at least one coordinate")
        if not np.all(np.isfinite(pts)):
            bad = np.unique(np.nonzero(~np.isfinite(pts))[0])
            raise ValueError(f"non-finite values in rows {bad[:10].tolist()}")
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(str(i) for i in range(pts.shape[0]))
        if len(ids) != pts.shape[0]:
            raise ValueError(f"{len(ids)} ids for {pts.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("row ids must be unique")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def D(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class NeighborGraph:
    """Ordered neighbour lists; column j holds the (j+1)-th nearest neighbour."""

    nn_index: np.ndarray
    nn_dist: np.ndarray

    @property
    def q_max(self) -> int:
        return self.nn_index.shape[1]

    @property
    def N(self) -> int:
        return self.nn_index.shape[0]


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Rows of exactly ``q`` neighbour indices (binary N x N semantics, not symmetric)."""

    rows: np.ndarray

    @property
    def q(self) -> int:
        return self.rows.shape[1]

    @property
    def N(self) -> int:
        return self.rows.shape[0]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.N, self.N), dtype=np.int8)
        dense[np.repeat(np.arange(self.N), self.q), self.rows.ravel()] = 1
        return dense

    def reverse(self):
        """CSR arrays ``(indptr, indices)`` listing, for each j, the rows i with j in row i."""
        src = np.repeat(np.arange(self.N, dtype=np.int64), self.q)
        dst = self.rows.ravel()
        order = np.argsort(dst, kind="stable")
        indices = src[order]
        indptr = np.zeros(self.N + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=self.N), out=indptr[1:])
        return indptr, indices


def _as_points(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    return Dataset(data).points


def _sq_dist_block(block: np.ndarray, X: np.ndarray) -> np.ndarray:
    # Coordinate-sequential accumulation: padding with zero columns cannot change rounding.
    acc = np.zeros((block.shape[0], X.shape[0]))
    for j in range(X.shape[1]):
        diff = block[:, j, None] - X[None, :, j]
        acc += diff * diff
    return acc


def _brute_force(X, q_max, chunk):
    N = X.shape[0]
    nn_index = np.empty((N, q_max), dtype=np.int64)
    nn_dist = np.empty((N, q_max))
    for start in range(0, N, chunk):
        stop = min(start + chunk, N)
        d2 = _sq_dist_block(X[start:stop], X)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort over columns in index order breaks ties by ascending index
        order = np.argsort(d2, axis=1, kind="stable")[:, :q_max]
        nn_index[start:stop] = order
        nn_dist[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return nn_index, nn_dist


def _kdtree(X, q_max):
    N = X.shape[0]
    tree = cKDTree(X)
    dist, _ = tree.query(X, k=q_max + 1)
    radius = dist[:, -1] * (1 + 1e-9) + 1e-300
    nn_index = np.empty((N, q_max), dtype=np.int64)
    nn_dist = np.empty((N, q_max))
    for i, cand in enumerate(tree.query_ball_point(X, radius)):
        cand = np.array(sorted(c for c in cand if c != i), dtype=np.int64)
        d2 = _sq_dist_block(X[i : i + 1], X[cand])[0]
        order = np.argsort(d2, kind="stable")[:q_max]
        nn_index[i] = cand[order]
        nn_dist[i] = np.sqrt(d2[order])
    return nn_index, nn_dist


def build_knn_graph(data, q_max: int = 3, metric: str = "euclidean", method: str = "brute",
                    chunk: int = 512) -> NeighborGraph:
    """Exact k-nearest-neighbour lists.

    Parameters
    ----------
    data : Dataset or array-like of shape (N, D)
    q_max : int
        Number of neighbours to keep per point (at least 2).
    metric : str
        Only ``"euclidean"`` is supported.
    method : {"brute", "kdtree"}
        Both paths return identical, tie-broken results; ties in distance
        are resolved by ascending row index.

    Raises
    ------
    DuplicatePointsError
        If any point has another point at distance zero.
    """
    if metric != "euclidean":
        raise ValueError(f"unsupported metric {metric!r}; only 'euclidean' is available")
    X = _as_points(data)
    N = X.shape[0]
    if q_max < 2:
        raise ValueError(f"q_max must be >= 2, got {q_max}")
    if N <= q_max:
        raise ValueError(f"need N > q_max, got N={N}, q_max={q_max}")
    if method == "brute":
        nn_index, nn_dist = _brute_force(X, q_max, chunk)
    elif method == "kdtree":
        nn_index, nn_dist = _kdtree(X, q_max)
    else:
        raise ValueError(f"unknown method {method!r}")
    dup = np.nonzero(nn_dist[:, 0] == 0.0)[0]
    if dup.size:
        raise DuplicatePointsError(dup)
    nn_index.setflags(write=False)
    nn_dist.setflags(write=False)
    return NeighborGraph(nn_index, nn_dist)


def compute_mu(graph: NeighborGraph) -> np.ndarray:
    """Ratio of second to first neighbour distance for every point."""
    if graph.q_max < 2:
        raise ValueError("graph must hold at least two neighbours per point")
    dup = np.nonzero(graph.nn_dist[:, 0] == 0.0)[0]
    if dup.size:
        raise DuplicatePointsError(dup)
    return graph.nn_dist[:, 1] / graph.nn_dist[:, 0]


def build_adjacency(graph: NeighborGraph, q: int) -> AdjacencyMatrix:
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if q > graph.q_max:
        raise ValueError(f"q={q} exceeds the {graph.q_max} neighbours computed")
    rows = np.ascontiguousarray(graph.nn_index[:, :q])
    return AdjacencyMatrix(rows)


def jitter(points, rng=None, magnitude: float = 1e-8) -> np.ndarray:
    """Add uniform noise of size ``magnitude`` times the data scale."""
    X = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(rng)
    scale = float(np.max(np.ptp(X, axis=0))) if X.size else 1.0
    scale = scale if scale > 0 else 1.0
    return X + rng.uniform(-1.0, 1.0, size=X.shape) * magnitude * scale


# ---------------------------------------------------------------------------
# file formats


def _all_numeric(fields) -> bool:
    try:
        [float(v) for v in fields]
    except ValueError:
        return False
    return bool(fields)


def read_dataset(path) -> Dataset:
    """Read a matrix from CSV (header row; optional leading ``id`` column) or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            payload = json.load(fh)
        if isinstance(payload, dict):
            return Dataset(np.asarray(payload["points"], dtype=float), tuple(payload.get("ids", ())))
        return Dataset(np.asarray(payload, dtype=float))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if _all_numeric(header):
        raise ValueError(f"{path}: first line is numeric; a header row is required")
    has_id = header and header[0].strip().lower() == "id"
    ids = tuple(r[0] for r in rows) if has_id else ()
    values = [[float(v) for v in (r[1:] if has_id else r)] for r in rows]
    width = len(header) - (1 if has_id else 0)
    for lineno, v in enumerate(values, start=2):
        if len(v) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} values, got {len(v)}")
    return Dataset(np.asarray(values, dtype=float).reshape(len(values), width), ids)


def write_dataset(path, data: Dataset, with_ids: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = [f"x{j + 1}" for j in range(data.D)]
        w.writerow((["id"] if with_ids else []) + cols)
        for rid, row in zip(data.ids, data.points):
            w.writerow(([rid] if with_ids else []) + [repr(float(v)) for v in row])


def write_mu(path, mu, ids=None) -> None:
    ids = ids if ids is not None else range(len(mu))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "mu"])
        for rid, m in zip(ids, mu):
            w.writerow([rid, repr(float(m))])


def write_adjacency(path, adj: AdjacencyMatrix, ids=None) -> None:
    ids = list(ids) if ids is not None else list(range(adj.N))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"nn{j + 1}" for j in range(adj.q)])
        for rid, row in zip(ids, adj.rows):
            w.writerow([rid] + [ids[j] for j in row])
