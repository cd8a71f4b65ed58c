"""Stage costs, the MMD tracking cost and the penalized objective.

All functions broadcast over a leading batch axis so that the solver can
evaluate a full finite-difference stencil at once.
"""

from __future__ import annotations

import numpy as np


MMD_DIMS = 2  # (CA50, IMEP)


def quadratic_cost(means, Ls, u_in, K, x_ref, u_ref, Q, R, QT) -> np.ndarray:
    """Expected quadratic cost.

    Args:
        means: predicted state means ``(..., N, n)`` for steps 1..N.
        Ls: matching Cholesky factors ``(..., N, n, n)``.
        u_in: input means ``(..., N, m)`` for steps 0..N-1.
        K: feedback gains ``(..., N, m, n)`` (zero at step 0), or None.
        x_ref: ``(N, n)`` or ``(n,)`` state references.
        u_ref: ``(N, m)`` or ``(m,)`` input references.
        Q, R, QT: stage, input and terminal weights; ``QT`` weighs step N.
    """
    means = np.asarray(means, dtype=float)
    N = means.shape[-2]
    W = np.broadcast_to(np.asarray(Q, float), (N,) + np.shape(Q)).copy()
    W[-1] = QT
    dx = means - x_ref
    J = np.einsum("...ia,iab,...ib->...", dx, W, dx)
    if Ls is not None:
        J = J + np.einsum("iab,...iak,...ibk->...", W, Ls, Ls)
    du = np.asarray(u_in, dtype=float) - u_ref
    J = J + np.einsum("...ia,ab,...ib->...", du, R, du)
    if K is not None:
        J = J + np.einsum("ab,...iak,...ibk->...", R, K, K)
    return J


def mmd_chi(samples, ref, sigma: float) -> np.ndarray:
    """Per-sample singleton-MMD terms on the (CA50, IMEP) sub-state; samples ``(..., S, n)``."""
    Z = np.asarray(samples, dtype=float)[..., :MMD_DIMS]
    S = Z.shape[-2]
    if S < 2:
        raise ValueError("MMD stage cost needs at least 2 samples")
    r = np.asarray(ref, dtype=float)[..., :MMD_DIMS]
    c = 1.0 / (2.0 * sigma**2)
    sq = np.einsum("...i,...i->...", Z, Z)
    G = Z @ np.swapaxes(Z, -1, -2)
    G *= 2.0 * c
    if S and 2.0 * c * sq.max() < 500.0:
        # k(a, b) = e(a) e(b) exp(2c a.b) with e(a) = exp(-c |a|^2): one exp per pair, no overflow here
        e = np.exp(-c * sq)
        np.exp(G, out=G)
        rowsum = (G @ e[..., None])[..., 0] * e
    else:
        G -= c * sq[..., :, None]
        G -= c * sq[..., None, :]
        np.minimum(G, 0.0, out=G)
        rowsum = np.exp(G, out=G).sum(-1)
    # the diagonal holds k(a, a) = 1
    pair = (rowsum - 1.0) / (S - 1)
    cross = np.exp(-np.sum((Z - r[..., None, :]) ** 2, -1) * c)
    return pair - 2.0 * cross


def mmd_stage_cost(samples, ref, sigma: float, A1) -> np.ndarray:
    """PCE expectation ``A1 . chi`` of the singleton MMD; the constant ``k(ref, ref)`` is omitted."""
    return mmd_chi(samples, ref, sigma) @ np.asarray(A1, dtype=float)


def squared_hinge(v) -> np.ndarray:
    v = np.maximum(np.asarray(v, dtype=float), 0.0)
    return np.sum(v * v, axis=tuple(range(1, v.ndim))) if v.ndim > 1 else np.sum(v * v)
