"""Distributionally robust (Cantelli) tightening of individual linear chance constraints.

For a row ``G_i`` the constraint ``P(G_i x <= g_i) >= 1 - eps`` holds for every
distribution with mean ``m`` and covariance ``L L'`` if
``G_i m + kappa(eps) * ||G_i L|| <= g_i``. The standard deviation of ``G_i x``
is the norm of the row ``G_i L``.
"""

from __future__ import annotations

import numpy as np


def cantelli_kappa(eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    return float(np.sqrt((1.0 - eps) / eps))


def tightened_violation(G, g, mean, spread, eps: float) -> np.ndarray:
    """Row-wise ``max(0, G mean + kappa ||G spread|| - g)``, broadcasting over leading axes.

    ``mean`` is (..., n) and ``spread`` is (..., n, k) (a Cholesky factor or a
    feedback gain acting on standard-normal directions).
    """
    G = np.asarray(G, dtype=float)
    mean_part = np.asarray(mean) @ G.T
    std = np.linalg.norm(np.einsum("rn,...nk->...rk", G, np.asarray(spread)), axis=-1)
    return np.maximum(0.0, mean_part + cantelli_kappa(eps) * std - np.asarray(g))


def chance_penalty_state(mean, L, limits, eps: float) -> np.ndarray:
    return tightened_violation(limits.Gx, limits.gx, mean, L, eps)


def chance_penalty_input(u_ff, K, limits, eps: float) -> np.ndarray:
    return tightened_violation(limits.Gu, limits.gu, u_ff, K, eps)
