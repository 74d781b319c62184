"""Synthetic manifolds with known intrinsic dimension and the classical two-NN estimators."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import special_ortho_group

from .neighbors import Dataset

KINDS = ("hypercube", "gaussian", "line", "circle")


class SeparationError(ValueError):
    def __init__(self, gap, required):
        self.gap = gap
        self.required = required
        super().__init__(f"manifolds are too close: minimum gap {gap:.6g} < required {required:.6g}")


@dataclass
class ManifoldSpec:
    kind: str = "hypercube"
    n: int = 1000
    d_true: int = 2
    D: int = 2
    offset: tuple | None = None
    scale: float = 1.0
    rotate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 3:
            raise ValueError(f"n must be >= 3, got {self.n}")
        if self.d_true < 1:
            raise ValueError(f"d_true must be >= 1, got {self.d_true}")
        if self.d_true > self.D:
            raise ValueError(f"d_true ({self.d_true}) exceeds D ({self.D})")
        if self.kind in ("line", "circle") and self.d_true != 1:
            raise ValueError(f"{self.kind} has d_true = 1, got {self.d_true}")
        if self.kind == "circle" and self.D < 2:
            raise ValueError("circle needs D >= 2")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.offset is not None:
            self.offset = tuple(float(v) for v in self.offset)
            if len(self.offset) != self.D:
                raise ValueError(f"offset has {len(self.offset)} entries, D={self.D}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["offset"] = list(self.offset) if self.offset is not None else None
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ManifoldSpec":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown manifold fields: {sorted(unknown)}")
        return cls(**payload)


def _latent(spec: ManifoldSpec, rng) -> np.ndarray:
    n, d, s = spec.n, spec.d_true, spec.scale
    if spec.kind == "hypercube":
        return rng.random((n, d)) * s
    if spec.kind == "gaussian":
        return rng.standard_normal((n, d)) * s
    if spec.kind == "line":
        return rng.random((n, 1)) * s
    angle = rng.random(n) * 2 * np.pi
    return np.column_stack([np.cos(angle), np.sin(angle)]) * s


def rotation(spec: ManifoldSpec) -> np.ndarray:
    """The orthogonal matrix applied when ``spec.rotate`` is set (identity otherwise)."""
    if not spec.rotate or spec.D == 1:
        return np.eye(spec.D)
    return special_ortho_group.rvs(spec.D, random_state=np.random.default_rng([spec.seed, 1]))


def generate(spec: ManifoldSpec, label: int = 0):
    """Sample ``spec.n`` points; returns ``(Dataset, labels)``."""
    rng = np.random.default_rng([spec.seed, 0])
    latent = _latent(spec, rng)
    X = np.zeros((spec.n, spec.D))
    X[:, : latent.shape[1]] = latent
    if spec.rotate:
        X = X @ rotation(spec).T
    if spec.offset is not None:
        X = X + np.asarray(spec.offset)
    return Dataset(X), np.full(spec.n, label, dtype=int)


def min_gap(A: np.ndarray, B: np.ndarray) -> float:
    dist, _ = cKDTree(B).query(A, k=1)
    return float(np.min(dist))


def multi_manifold(specs, min_ratio: float = 5.0):
    """Concatenate several manifolds, checking they are separated.

    Every pair must be at least ``min_ratio`` times the largest ``scale``
    apart (closest points), otherwise ``SeparationError``.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("at least one manifold spec is required")
    Ds = {s.D for s in specs}
    if len(Ds) != 1:
        raise ValueError(f"all manifolds must share D, got {sorted(Ds)}")
    parts = [generate(s, label)[0].points for label, s in enumerate(specs)]
    required = min_ratio * max(s.scale for s in specs)
    gaps = [min_gap(parts[i], parts[j]) for i in range(len(parts)) for j in range(i + 1, len(parts))]
    if gaps and min(gaps) < required:
        raise SeparationError(min(gaps), required)
    labels = np.concatenate([np.full(s.n, k, dtype=int) for k, s in enumerate(specs)])
    return Dataset(np.vstack(parts)), labels


def _clean_mu(mu, tolerance=0.01):
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 1):
        raise ValueError("two-NN ratios must be >= 1")
    ties = mu == 1.0
    if ties.any():
        if ties.sum() >= tolerance * mu.size:
            raise ValueError(f"{int(ties.sum())} ratios equal 1 (first and second neighbour tied)")
        warnings.warn(f"excluding {int(ties.sum())} ratio(s) equal to 1", RuntimeWarning, stacklevel=3)
    return mu[~ties]


def twonn_mle(mu) -> float:
    """Maximum-likelihood Pareto shape: N / sum(log mu)."""
    mu = _clean_mu(mu)
    return mu.size / float(np.sum(np.log(mu)))


def twonn_linear_fit(mu, discard_fraction: float = 0.1) -> float:
    """Slope through the origin of -log(1 - F_emp(mu)) against log(mu).

    The empirical CDF of the i-th smallest ratio is i / N; the largest
    ``discard_fraction`` of ratios is dropped (the top one always is, since
    its CDF value is 1).
    """
    if not 0 <= discard_fraction < 0.5:
        raise ValueError(f"discard_fraction must lie in [0, 0.5), got {discard_fraction}")
    mu = np.sort(_clean_mu(mu))
    N = mu.size
    keep = min(int(np.floor(N * (1.0 - discard_fraction))), N - 1)
    if keep < 10:
        raise ValueError(f"only {keep} ratios left after discarding; need at least 10")
    x = np.log(mu[:keep])
    y = -np.log1p(-np.arange(1, keep + 1) / N)
    return float(np.dot(x, y) / np.dot(x, x))


def write_labels(path, labels, ids=None) -> None:
    ids = ids if ids is not None else range(len(labels))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for rid, lab in zip(ids, labels):
            w.writerow([rid, int(lab)])


def load_specs(path) -> list:
    """Read one spec, a list of specs, or ``{"manifolds": [...], "min_ratio": r}`` from JSON."""
    with open(path) as fh:
        payload = json.load(fh)
    if isinstance(payload, dict) and "manifolds" in payload:
        payload = payload["manifolds"]
    if isinstance(payload, dict):
        payload = [payload]
    return [ManifoldSpec.from_dict(p) for p in payload]
