"""Moment propagation over the prediction horizon.

Three propagation schemes share one batched layout so that a whole
finite-difference stencil of decisions is rolled out in one call:

* PCE scenarios: state samples ``x = mean + L xi`` and inputs ``u = u_ff + K xi``
  pushed through the model with learned residual draws, then projected;
* Gaussian: mean through the model, covariance through a Jacobian
  linearization, with a linear-Gaussian residual;
* nominal: deterministic recursion, zero covariance.

Batched shapes: ``u0`` (B, m), ``u_ff`` (B, N-1, m), ``K`` (B, N-1, m, n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..engine import PlantCoefficients, step_normalized
from ..pce import (STEP0_CONFIG, STEPI_CONFIG, PceConfig, PceProjection, build_projection,
                   build_projection_woodbury, multi_index_set, pce_covariance, pce_mean)


@dataclass(frozen=True)
class PredictionModel:
    """``step(x, u, r)`` advances the (normalized) state given residual ``r``;
    ``residual(x, w)`` maps states and latent draws to residuals. Both broadcast
    over leading axes. ``residual=None`` disables the residual.
    """

    step: Callable
    residual: Callable | None = None
    n_x: int = 3
    n_u: int = 3
    n_r: int = 2

    @classmethod
    def engine(cls, residual=None, coef: PlantCoefficients = PlantCoefficients()) -> "PredictionModel":
        return cls(lambda x, u, r: step_normalized(x, u, r, coef), residual)

    def without_residual(self) -> "PredictionModel":
        return PredictionModel(self.step, None, self.n_x, self.n_u, self.n_r)


def wae_residual(model):
    from ..wae import decoder_eval

    def g(x, w):
        x = np.asarray(x)
        return decoder_eval(model, np.broadcast_to(w, x.shape[:-1] + (np.shape(w)[-1],)), x)

    return g


@dataclass(frozen=True)
class ScenarioSet:
    """Frozen collocation draws and projection operators.

    ``proj0`` works on latent draws ``w0`` (N_w0, n_w) at the first step, where
    the state is measured; ``proj`` works on joint draws whose first ``n_x``
    columns are the state germ ``xi`` and the rest the latent ``w``.
    """

    proj0: PceProjection
    proj: PceProjection
    n_x: int = 3

    @property
    def w0(self) -> np.ndarray:
        return self.proj0.points

    @property
    def xi(self) -> np.ndarray:
        return self.proj.points[:, :self.n_x]

    @property
    def w(self) -> np.ndarray:
        return self.proj.points[:, self.n_x:]

    @classmethod
    def build(cls, n_x: int = 3, n_w: int = 2, step0: PceConfig = STEP0_CONFIG,
              stepi: PceConfig = STEPI_CONFIG, degree0: int = 3, degree: int = 2) -> "ScenarioSet":
        mis0 = multi_index_set(n_w, degree0)
        mis = multi_index_set(n_x + n_w, degree)
        p0 = build_projection(mis0, step0)
        try:
            p = build_projection_woodbury(mis, stepi)
        except ValueError:
            p = build_projection(mis, stepi)
        return cls(p0, p, n_x)


@dataclass(frozen=True)
class MomentState:
    mean: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L)
        if np.any(np.triu(L, 1) != 0) or np.any(np.diag(L) < 0):
            raise ValueError("L must be lower triangular with a nonnegative diagonal")

    @property
    def cov(self) -> np.ndarray:
        return self.L @ self.L.T


def cholesky_jittered(S, jitter: float) -> np.ndarray:
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    n = S.shape[-1]
    return np.linalg.cholesky(S + jitter * np.eye(n))


def propagate_step(moment: MomentState, u_ff, K, xi, w, model: PredictionModel, first_step: bool = False):
    """One scenario propagation; returns ``(next_samples (N, n), input_samples (N, m))``.

    At the first step the state is known (``L`` must be zero), there is no
    feedback and the input is clamped to the normalized hard box.
    """
    u_ff = np.asarray(u_ff, dtype=float)
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    Ns = w.shape[0]
    if first_step:
        if np.any(moment.L != 0):
            raise ValueError("first step requires a measured state (L = 0)")
        X = np.broadcast_to(moment.mean, (Ns, moment.mean.size))
        U = np.broadcast_to(np.clip(u_ff, -1.0, 1.0), (Ns, u_ff.size))
    else:
        X = moment.mean + xi @ moment.L.T
        U = u_ff + xi @ np.asarray(K, dtype=float).T
    r = 0.0 if model.residual is None else model.residual(X, w)
    Xn = model.step(X, U, r)
    if not np.all(np.isfinite(Xn)):
        raise FloatingPointError("non-finite propagated samples")
    return Xn, U


@dataclass
class RolloutBatch:
    means: np.ndarray  # (B, N+1, n)
    L: np.ndarray  # (B, N+1, n, n)
    samples: list  # N arrays (B, N_s, n): samples of states 1..N
    A1: list  # N rows of the projections that produced them


def _project_moments(proj: PceProjection, X, jitter):
    C = proj.A @ X  # (B, P, n)
    return pce_mean(C), cholesky_jittered(pce_covariance(C), jitter)


def pce_advance(i: int, mean, L, u, K, scen: ScenarioSet, model: PredictionModel, jitter: float, r0=None,
                shared_tail: int = 0):
    """Advance a batch of moments one step; returns ``(samples (B, S, n), mean+, L+, A1)``.

    Step 0 starts from the measured state ``mean`` (B, n) with no spread or
    feedback and uses the latent-only draws; ``r0`` caches their residuals.
    The last ``shared_tail`` rows must carry the same moments as row 0; their
    residuals are copied instead of recomputed.
    """
    if i == 0:
        if r0 is None:
            r0 = first_step_residual(mean[0], scen, model)
        X = model.step(mean[:, None, :], u[:, None, :], r0)
        X = np.broadcast_to(X, (X.shape[0], scen.w0.shape[0], X.shape[-1]))  # r0 = 0 leaves one row
        m, Lp = _project_moments(scen.proj0, X, jitter)
        return X, m, Lp, scen.proj0.A1
    xi, w = scen.xi, scen.w
    Xs = mean[:, None, :] + np.einsum("jk,bnk->bjn", xi, L)
    Us = u[:, None, :] + np.einsum("jk,bmk->bjm", xi, K)
    if model.residual is None:
        r = 0.0
    elif 0 < shared_tail < Xs.shape[0]:
        head = Xs.shape[0] - shared_tail
        rh = model.residual(Xs[:head], w)
        r = np.concatenate([rh, np.broadcast_to(rh[:1], (shared_tail,) + rh.shape[1:])])
    else:
        r = model.residual(Xs, w)
    X = model.step(Xs, Us, r)
    m, Lp = _project_moments(scen.proj, X, jitter)
    return X, m, Lp, scen.proj.A1


def pce_rollout_batch(x0, u0, u_ff, K, scen: ScenarioSet, model: PredictionModel, jitter: float,
                      r0=None) -> RolloutBatch:
    """Scenario/PCE rollout. ``r0`` may hold the precomputed first-step residual draws."""
    x0 = np.asarray(x0, dtype=float)
    B = u0.shape[0]
    N = u_ff.shape[1] + 1
    n = x0.size
    means = np.empty((B, N + 1, n))
    Ls = np.zeros((B, N + 1, n, n))
    means[:, 0] = x0
    samples, A1 = [], []
    for i in range(N):
        u = u0 if i == 0 else u_ff[:, i - 1]
        Ki = None if i == 0 else K[:, i - 1]
        X, means[:, i + 1], Ls[:, i + 1], a1 = pce_advance(i, means[:, i], Ls[:, i], u, Ki, scen, model,
                                                            jitter, r0)
        samples.append(X)
        A1.append(a1)
    return RolloutBatch(means, Ls, samples, A1)


def first_step_residual(x0, scen: ScenarioSet, model: PredictionModel):
    if model.residual is None:
        return 0.0
    return model.residual(np.broadcast_to(np.asarray(x0, float), (scen.w0.shape[0], np.size(x0))), scen.w0)


def nominal_rollout_batch(x0, u0, u_ff, model: PredictionModel) -> RolloutBatch:
    x0 = np.asarray(x0, dtype=float)
    B = u0.shape[0]
    N = u_ff.shape[1] + 1
    n = x0.size
    means = np.empty((B, N + 1, n))
    means[:, 0] = x0
    U = np.concatenate([u0[:, None, :], u_ff], axis=1)
    for i in range(N):
        means[:, i + 1] = model.step(means[:, i], U[:, i], 0.0)
    return RolloutBatch(means, np.zeros((B, N + 1, n, n)), [means[:, i + 1, None, :] for i in range(N)],
                        [np.ones(1)] * N)


@dataclass(frozen=True)
class LinearGaussianResidual:
    """Residual model ``r ~ N(C x + d, Sigma)``."""

    C: np.ndarray
    d: np.ndarray
    Sigma: np.ndarray

    def mean(self, x):
        return np.asarray(x) @ self.C.T + self.d


def gaussian_residual_fit(states, residuals) -> LinearGaussianResidual:
    """Least-squares fit of an affine residual mean plus the empirical residual covariance."""
    X = np.asarray(states, dtype=float)
    Y = np.asarray(residuals, dtype=float)
    n_par = (X.shape[1] + 1) * Y.shape[1]
    if X.shape[0] < 10 * n_par:
        raise ValueError(f"need at least {10 * n_par} records, got {X.shape[0]}")
    D = np.hstack([X, np.ones((X.shape[0], 1))])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient regression design")
    coef, *_ = np.linalg.lstsq(D, Y, rcond=None)
    E = Y - D @ coef
    Sigma = E.T @ E / X.shape[0]
    return LinearGaussianResidual(coef[:-1].T.copy(), coef[-1].copy(), 0.5 * (Sigma + Sigma.T))


def _jacobians(step, x, u, r, h=1e-6):
    """Central differences of ``step`` at a batch of points; returns Jx, Ju, Jr with shape (B, n, k)."""
    B, n = x.shape
    m, q = u.shape[1], r.shape[1]
    k = n + m + q
    E = np.eye(k) * h
    dx = np.concatenate([E[:, :n], -E[:, :n]])
    du = np.concatenate([E[:, n:n + m], -E[:, n:n + m]])
    dr = np.concatenate([E[:, n + m:], -E[:, n + m:]])
    out = step(x[:, None, :] + dx, u[:, None, :] + du, r[:, None, :] + dr)  # (B, 2k, n)
    J = (out[:, :k] - out[:, k:]) / (2 * h)  # (B, k, n)
    J = np.swapaxes(J, 1, 2)
    return J[:, :, :n], J[:, :, n:n + m], J[:, :, n + m:]


def gaussian_advance(i: int, mean, L, u, K, model: PredictionModel, res: LinearGaussianResidual,
                     jitter: float):
    """Linearized moment step with inputs ``u + K xi`` and states ``mean + L xi``; returns ``(mean+, L+)``."""
    rm = res.mean(mean)
    m_next = model.step(mean, u, rm)
    Jx, Ju, Jr = _jacobians(model.step, mean, u, rm)
    S = Jr @ res.Sigma @ np.swapaxes(Jr, 1, 2)
    if i > 0:
        M = (Jx + Jr @ res.C) @ L + Ju @ K
        S = S + M @ np.swapaxes(M, 1, 2)
    return m_next, cholesky_jittered(S, jitter)


def gaussian_rollout_batch(x0, u0, u_ff, K, model: PredictionModel, res: LinearGaussianResidual,
                           jitter: float) -> RolloutBatch:
    x0 = np.asarray(x0, dtype=float)
    B = u0.shape[0]
    N = u_ff.shape[1] + 1
    n = x0.size
    means = np.empty((B, N + 1, n))
    Ls = np.zeros((B, N + 1, n, n))
    means[:, 0] = x0
    for i in range(N):
        u = u0 if i == 0 else u_ff[:, i - 1]
        Ki = None if i == 0 else K[:, i - 1]
        means[:, i + 1], Ls[:, i + 1] = gaussian_advance(i, means[:, i], Ls[:, i], u, Ki, model, res, jitter)
    return RolloutBatch(means, Ls, [means[:, i + 1, None, :] for i in range(N)], [np.ones(1)] * N)


def forward_rollout(x0, u0, u_ff, K, scen: ScenarioSet, model: PredictionModel, jitter: float = 1e-9):
    """Single-decision PCE rollout; returns a list of N+1 MomentStates and the per-step sample matrices."""
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("non-finite initial state")
    rb = pce_rollout_batch(x0, np.asarray(u0, float)[None], np.asarray(u_ff, float)[None],
                           np.asarray(K, float)[None], scen, model, jitter)
    moments = [MomentState(rb.means[0, i], rb.L[0, i]) for i in range(rb.means.shape[1])]
    return moments, [s[0] for s in rb.samples]
