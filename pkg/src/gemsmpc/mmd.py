"""Gaussian kernel, unbiased MMD^2 estimator and a permutation two-sample null."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BLOCK = 1024


@dataclass(frozen=True)
class KernelSpec:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"kernel bandwidth must be > 0, got {self.sigma}")


def gaussian_kernel(a, b, k: KernelSpec) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.exp(-np.sum((a - b) ** 2) / (2.0 * k.sigma**2)))


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def gram(X, Y, sigma: float) -> np.ndarray:
    X, Y = _as_points(X), _as_points(Y)
    d2 = np.sum(X**2, 1)[:, None] + np.sum(Y**2, 1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * sigma**2))


def _kernel_sum(X, Y, sigma):
    s = 0.0
    for i in range(0, X.shape[0], _BLOCK):
        s += gram(X[i:i + _BLOCK], Y, sigma).sum()
    return s


def mmd2_unbiased(X, Y, k: KernelSpec) -> float:
    """Unbiased estimate of MMD^2 between the distributions behind ``X`` and ``Y``.

    Uses the within-sample means over distinct pairs and twice the cross
    mean; the result can be slightly negative.
    """
    X, Y = _as_points(X), _as_points(Y)
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"need at least 2 samples per set, got {n} and {m}")
    kxx = (_kernel_sum(X, X, k.sigma) - n) / (n * (n - 1))
    kyy = (_kernel_sum(Y, Y, k.sigma) - m) / (m * (m - 1))
    kxy = _kernel_sum(X, Y, k.sigma) / (n * m)
    return float(kxx + kyy - 2.0 * kxy)


def mmd2_unbiased_grad(X: np.ndarray, Y: np.ndarray, sigma: float):
    """Value and gradient of the unbiased MMD^2 with respect to the first sample set."""
    n, m = X.shape[0], Y.shape[0]
    Kxx = gram(X, X, sigma)
    Kyy = gram(Y, Y, sigma)
    Kxy = gram(X, Y, sigma)
    val = ((Kxx.sum() - n) / (n * (n - 1)) + (Kyy.sum() - m) / (m * (m - 1))
           - 2.0 * Kxy.sum() / (n * m))
    s2 = sigma**2
    # d k(a, b) / d a = -k (a - b) / sigma^2; diagonal terms have zero displacement
    gxx = -(Kxx.sum(1)[:, None] * X - Kxx @ X) / s2
    gxy = -(Kxy.sum(1)[:, None] * X - Kxy @ Y) / s2
    dX = 2.0 / (n * (n - 1)) * gxx - 2.0 / (n * m) * gxy
    return float(val), dX


def mmd_permutation_null(X, Y, k: KernelSpec, n_perm: int, rng: np.random.Generator,
                         block: int = _BLOCK) -> tuple[float, np.ndarray]:
    """Observed unbiased MMD^2 and its permutation null distribution.

    The pooled kernel matrix is streamed in row blocks and never stored whole,
    so sets of ~10^4 points are affordable.
    """
    X, Y = _as_points(X), _as_points(Y)
    n, m = X.shape[0], Y.shape[0]
    Z = np.vstack([X, Y])
    N = n + m
    S = np.zeros((N, n_perm + 1))
    S[:n, 0] = 1.0
    for j in range(1, n_perm + 1):
        S[rng.permutation(N)[:n], j] = 1.0
    aKa = np.zeros(n_perm + 1)
    aK1 = np.zeros(n_perm + 1)
    total = 0.0
    for i in range(0, N, block):
        Kb = gram(Z[i:i + block], Z, k.sigma)
        KS = Kb @ S
        rows = Kb.sum(1)
        aKa += np.sum(S[i:i + block] * KS, axis=0)
        aK1 += S[i:i + block].T @ rows
        total += rows.sum()
    # with a = membership of X and b = 1 - a: aKb = aK1 - aKa, bKb = total - 2 aK1 + aKa
    kxx = (aKa - n) / (n * (n - 1))
    kyy = (total - 2.0 * aK1 + aKa - m) / (m * (m - 1))
    kxy = (aK1 - aKa) / (n * m)
    stats = kxx + kyy - 2.0 * kxy
    return float(stats[0]), stats[1:]
