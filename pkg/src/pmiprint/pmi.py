"""Pooled membership inference: which of m mini-datasets was used for training.

Each mini-dataset is mapped to the matrix of its samples' logits, the m
matrices are normalized jointly, compared pairwise with the unbiased MMD
estimate under a dot-product kernel, and clustered bottom-up with single
linkage. The smaller of the two clusters joined by the last merge holds the
member.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import MiniDataset
from .errors import ConfigError, FormatError
from .nn import MlpModel, logits


class ZeroVarianceWarning(RuntimeWarning):
    """A logit component was constant over a trial and has been zeroed."""


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray  # (n, c)
    source_index: int

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature matrix has non-finite entries")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def c(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class ClusterTree:
    """Merge history of agglomerative clustering over ``m`` leaves.

    ``merges[k] = (A, B, distance)`` with ``min(A) < min(B)``; ``final`` is the
    pair joined by the last merge.
    """

    m: int
    merges: tuple[tuple[tuple[int, ...], tuple[int, ...], float], ...]

    @property
    def final(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        a, b, _ = self.merges[-1]
        return a, b


def extract_features(model: MlpModel, mini: MiniDataset) -> FeatureMatrix:
    if mini.n < 2:
        raise ConfigError(f"mini-dataset needs n >= 2 samples, got {mini.n}")
    return FeatureMatrix(logits(model, mini.X), mini.index)


def normalize_features(matrices: Sequence[FeatureMatrix]) -> list[FeatureMatrix]:
    """Per logit component, zero mean and unit mean-square over all n*m rows."""
    if not matrices:
        raise ConfigError("nothing to normalize")
    shape = matrices[0].rows.shape
    if any(f.rows.shape != shape for f in matrices):
        raise ConfigError("feature matrices must share n and c")
    stacked = np.stack([f.rows for f in matrices])  # (m, n, c)
    centered = stacked - stacked.mean(axis=(0, 1))
    rms = np.sqrt(np.mean(centered ** 2, axis=(0, 1)))
    dead = rms == 0
    if np.any(dead):
        warnings.warn(f"zero-variance logit components {np.flatnonzero(dead).tolist()} set to 0",
                      ZeroVarianceWarning, stacklevel=2)
    scaled = np.divide(centered, rms, out=np.zeros_like(centered), where=~dead)
    return [FeatureMatrix(rows, f.source_index) for rows, f in zip(scaled, matrices)]


def _offdiag_sum(A: np.ndarray, B: np.ndarray) -> float:
    # sum_{i != j} a_i . b_j under the dot-product kernel
    return float(A.sum(axis=0) @ B.sum(axis=0) - np.einsum("ij,ij->", A, B))


def mmd_squared_unbiased(X, Y) -> float:
    """Unbiased MMD^2 with k(x, y) = x . y; may be negative in finite samples."""
    X = X.rows if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    Y = Y.rows if isinstance(Y, FeatureMatrix) else np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ConfigError(f"MMD needs equally sized sets, got {X.shape} and {Y.shape}")
    n = X.shape[0]
    if n < 2:
        raise ConfigError(f"MMD needs at least 2 samples per set, got {n}")
    # h[i,j] sums to kxx + kyy - k(x_i,y_j) - k(x_j,y_i); the last two are equal in total
    total = _offdiag_sum(X, X) + _offdiag_sum(Y, Y) - 2.0 * _offdiag_sum(X, Y)
    return total / (n * n - n)


def mmd_unbiased(X, Y) -> float:
    """Square root of the unbiased MMD^2 estimate, clamped at zero first."""
    return float(np.sqrt(max(mmd_squared_unbiased(X, Y), 0.0)))


def distance_matrix(matrices: Sequence[FeatureMatrix],
                    metric: Callable = mmd_unbiased) -> np.ndarray:
    m = len(matrices)
    if m < 2:
        raise ConfigError(f"need at least 2 feature matrices, got {m}")
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = metric(matrices[i], matrices[j])
    return D


def _validate_distances(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] < 2:
        raise ConfigError(f"need a square distance matrix with m >= 2, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ConfigError("distance matrix has non-finite entries")
    if np.any(D < 0):
        raise ConfigError("distance matrix has negative entries")
    if not np.array_equal(D, D.T):
        raise ConfigError("distance matrix is not symmetric")
    return D


def agglomerative_cluster(dist) -> ClusterTree:
    """Single-linkage agglomeration; ties go to the lexicographically smallest
    pair of minimum member indices."""
    D = _validate_distances(dist)
    m = D.shape[0]
    clusters = [(i,) for i in range(m)]  # kept sorted by minimum member
    link = D.copy()
    np.fill_diagonal(link, np.inf)
    merges = []
    while len(clusters) > 1:
        # row-major argmin over the upper triangle is the lexicographic tie-break
        k = len(clusters)
        upper = np.where(np.triu(np.ones((k, k), dtype=bool), 1), link, np.inf)
        a, b = divmod(int(np.argmin(upper)), k)
        merges.append((clusters[a], clusters[b], float(link[a, b])))
        merged = tuple(sorted(clusters[a] + clusters[b]))
        # single linkage: distance to the union is the smaller of the two
        row = np.minimum(link[a], link[b])
        link[a], link[:, a] = row, row
        link[a, a] = np.inf
        link = np.delete(np.delete(link, b, axis=0), b, axis=1)
        clusters[a] = merged
        del clusters[b]
    return ClusterTree(m, tuple(merges))


def _join_distance(tree: ClusterTree) -> np.ndarray:
    """Distance at which each leaf first left its singleton cluster."""
    out = np.full(tree.m, np.nan)
    for a, b, dist in tree.merges:
        for group in (a, b):
            if len(group) == 1:
                out[group[0]] = dist
    return out


def abnormal_cluster(tree: ClusterTree) -> tuple[int, ...]:
    g1, g2 = tree.final
    if len(g1) != len(g2):
        return g1 if len(g1) < len(g2) else g2
    # equal sizes: the cluster holding the most isolated leaf (first maximum wins)
    leaf = int(np.argmax(_join_distance(tree)))
    return g1 if leaf in g1 else g2


def select_outlier(tree: ClusterTree, seed: int) -> int:
    if not tree.merges or len(tree.merges) != tree.m - 1:
        raise ConfigError("malformed cluster tree")
    group = abnormal_cluster(tree)
    if len(group) == 1:
        return group[0]
    rng = np.random.default_rng(seed)
    return group[int(rng.integers(len(group)))]


def infer_from_features(matrices: Sequence[FeatureMatrix], seed: int) -> int:
    """Run the inference on pre-extracted logits; returns a ``source_index``."""
    ordered = sorted(matrices, key=lambda f: f.source_index)
    normalized = normalize_features(ordered)
    tree = agglomerative_cluster(distance_matrix(normalized))
    return ordered[select_outlier(tree, seed)].source_index


def infer_member(model: MlpModel, minis: Sequence[MiniDataset], seed: int) -> int:
    """Index of the mini-dataset judged to have been in the training set."""
    if len({mini.label for mini in minis}) > 1:
        raise ConfigError("all mini-datasets must share one class label")
    if len({mini.n for mini in minis}) > 1:
        raise ConfigError("all mini-datasets must have the same size")
    return infer_from_features([extract_features(model, mini) for mini in minis], seed)


def read_logit_file(path, source_index: int) -> FeatureMatrix:
    """Header ``n,c`` then ``n`` rows of ``c`` comma-separated floats."""
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty logit file")
    try:
        n, c = (int(v) for v in lines[0].split(","))
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(rows) != n or any(len(r) != c for r in rows):
        raise FormatError(f"{path}: expected {n} rows of {c} values")
    try:
        return FeatureMatrix(np.array(rows, dtype=np.float64).reshape(n, c), source_index)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_logit_file(features: FeatureMatrix, path) -> None:
    with open(path, "w") as f:
        f.write(f"{features.n},{features.c}\n")
        for row in features.rows:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
