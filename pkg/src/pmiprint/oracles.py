"""Slow, direct reference implementations used to cross-check the fast paths.

Nothing here shares code with :mod:`pmiprint.pmi` or :mod:`pmiprint.nn`
beyond the model container.
"""

from __future__ import annotations

import numpy as np

from .nn import MlpModel


def mmd_bruteforce(X, Y) -> float:
    """Double loop over ordered pairs i != j, dot-product kernel, clamped root."""
    X = [list(map(float, row)) for row in X]
    Y = [list(map(float, row)) for row in Y]
    n = len(X)

    def k(a, b):
        return sum(u * v for u, v in zip(a, b))

    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += k(X[i], X[j]) + k(Y[i], Y[j]) - k(X[i], Y[j]) - k(X[j], Y[i])
    s = total / (n * n - n)
    return max(s, 0.0) ** 0.5


def single_linkage_naive(D) -> list[tuple[tuple[int, ...], tuple[int, ...], float]]:
    """Re-scan every cluster pair and every member pair on each iteration."""
    D = np.asarray(D, dtype=np.float64)
    clusters = [{i} for i in range(D.shape[0])]
    merges = []
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(len(clusters)):
                if a == b:
                    continue
                A, B = clusters[a], clusters[b]
                if min(A) > min(B):
                    continue
                dist = min(D[i, j] for i in A for j in B)
                key = (dist, min(A), min(B))
                if best is None or key < best[0]:
                    best = (key, a, b)
        (dist, _, _), a, b = best
        A, B = clusters[a], clusters[b]
        merges.append((tuple(sorted(A)), tuple(sorted(B)), float(dist)))
        clusters = [cl for k, cl in enumerate(clusters) if k not in (a, b)] + [A | B]
    return merges


def cross_entropy(model: MlpModel, X, y) -> float:
    total = 0.0
    for x, label in zip(np.asarray(X, dtype=np.float64), y):
        hidden = np.maximum(model.W1 @ x + model.b1, 0.0)
        z = model.W2 @ hidden + model.b2
        top = z.max()
        total += top + np.log(np.sum(np.exp(z - top))) - z[label]
    return total / len(y)


def numerical_gradient(model: MlpModel, X, y, step: float = 1e-5) -> list[np.ndarray]:
    """Central differences of :func:`cross_entropy` for every parameter entry."""
    params = [np.array(p) for p in model.params]
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            plus = cross_entropy(MlpModel(*params), X, y)
            p[idx] = orig - step
            minus = cross_entropy(MlpModel(*params), X, y)
            p[idx] = orig
            g[idx] = (plus - minus) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def pooled_moments(matrices) -> tuple[np.ndarray, np.ndarray]:
    """Per-component pooled mean and mean of squares over all rows of all matrices."""
    rows = np.vstack([np.asarray(getattr(f, "rows", f)) for f in matrices])
    return rows.mean(axis=0), (rows ** 2).mean(axis=0)
