"""Randomized cross-checks of the fast numerical paths against the slow oracles."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import oracles
from .nn import init_model, loss_and_grads
from .pmi import FeatureMatrix, agglomerative_cluster, mmd_unbiased, normalize_features


def check_mmd(seed: int = 0, cases: int = 200) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        n, c = int(rng.integers(2, 9)), int(rng.integers(1, 7))
        X, Y = rng.standard_normal((n, c)), rng.standard_normal((n, c))
        if abs(mmd_unbiased(X, Y) - oracles.mmd_bruteforce(X, Y)) > 1e-12:
            return False
        if mmd_unbiased(X, X) != 0.0:
            return False
    return True


def check_clustering(seed: int = 0, cases: int = 200) -> bool:
    rng = np.random.default_rng(seed)
    for case in range(cases):
        m = int(rng.integers(2, 8))
        A = rng.random((m, m))
        if case % 4 == 0:
            # coarse grid forces ties
            A = np.round(A * 3) / 3
        D = np.triu(A, 1) + np.triu(A, 1).T
        tree = agglomerative_cluster(D)
        expected = oracles.single_linkage_naive(D)
        if [(a, b, dist) for a, b, dist in tree.merges] != expected:
            return False
    return True


def check_normalization(seed: int = 0, cases: int = 100) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        m, n, c = int(rng.integers(1, 6)), int(rng.integers(2, 51)), int(rng.integers(1, 11))
        scale = rng.uniform(0.1, 10.0, c)
        shift = rng.uniform(-5.0, 5.0, c)
        mats = [FeatureMatrix(shift + scale * rng.standard_normal((n, c)), i) for i in range(m)]
        mean, meansq = oracles.pooled_moments(normalize_features(mats))
        if np.any(np.abs(mean) >= 1e-9) or np.any(np.abs(meansq - 1.0) >= 1e-9):
            return False
    return True


def check_gradients(seed: int = 0, cases: int = 20) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        d, h, c = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(2, 5))
        model = init_model(d, h, c, rng)
        model = type(model)(model.W1, rng.normal(0, 0.5, h), model.W2, rng.normal(0, 0.5, c))
        X = rng.standard_normal((6, d))
        y = rng.integers(0, c, 6)
        _, analytic = loss_and_grads(model, X, y)
        numeric = oracles.numerical_gradient(model, X, y, step=1e-5)
        if any(oracles.relative_error(a, b) > 1e-4 for a, b in zip(analytic, numeric)):
            return False
    return True


CHECKS: dict[str, Callable[[], bool]] = {
    "mmd-oracle": check_mmd,
    "clustering-oracle": check_clustering,
    "normalization": check_normalization,
    "gradient": check_gradients,
}


def run(echo=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        start = time.perf_counter()
        passed = check()
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'} {name} ({time.perf_counter() - start:.2f}s)")
    return ok
