"""LQR gain and terminal weight from a linearization of the prediction model."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_discrete_lyapunov


def riccati_gain(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100000):
    """Iterate the discrete Riccati recursion to its fixed point.

    Returns ``(K, P)`` with the convention ``u = K x``. Raises ``ValueError`` if
    the iteration diverges or does not settle.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        S = R + B.T @ P @ B
        G = np.linalg.solve(S, B.T @ P @ A)
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ G
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)) or np.abs(Pn).max() > 1e12:
            raise ValueError("Riccati iteration diverged (pair not stabilizable?)")
        if np.abs(Pn - P).max() <= tol * max(1.0, np.abs(P).max()):
            P = Pn
            break
        P = Pn
    else:
        raise ValueError("Riccati iteration did not converge")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, P


def terminal_weight(Q, R, A, B):
    """LQR gain and the terminal weight solving ``QT = Q + K'RK + (A+BK)' QT (A+BK)``."""
    K, _ = riccati_gain(A, B, Q, R)
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Acl = A + B @ K
    if np.max(np.abs(np.linalg.eigvals(Acl))) >= 1.0:
        raise ValueError("closed loop not stable at the linearization point")
    QT = solve_discrete_lyapunov(Acl.T, np.atleast_2d(Q) + K.T @ np.atleast_2d(R) @ K)
    return K, 0.5 * (QT + QT.T)


def linearize(step, x, u, h: float = 1e-6):
    """Central-difference Jacobians of ``step(x, u)`` with respect to x and u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        A[:, i] = (step(x + e, u) - step(x - e, u)) / (2 * h)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        B[:, j] = (step(x, u + e) - step(x, u - e)) / (2 * h)
    return A, B
