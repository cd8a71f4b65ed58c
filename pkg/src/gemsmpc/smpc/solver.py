"""Single-shooting penalty-method solver with batched finite-difference gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .config import SmpcConfig
from .chance import tightened_violation
from .objective import mmd_stage_cost
from .propagation import (LinearGaussianResidual, PredictionModel, ScenarioSet, first_step_residual,
                          gaussian_advance, pce_advance)

VARIANTS = ("nominal", "gaussian", "pc", "gem")


@dataclass
class SmpcDecision:
    """Step-0 input plus feedforward/feedback pairs for steps 1..N-1 (normalized units).

    ``K`` is None for policies without feedback (nominal variant).
    """

    u0: np.ndarray
    u_ff: np.ndarray
    K: np.ndarray | None = None
    shifted: int = 0

    @property
    def horizon(self) -> int:
        return self.u_ff.shape[0] + 1

    def pack(self) -> np.ndarray:
        parts = [self.u0.ravel()]
        for i in range(self.u_ff.shape[0]):
            parts.append(self.u_ff[i].ravel())
            if self.K is not None:
                parts.append(self.K[i].ravel())
        return np.concatenate(parts)

    @staticmethod
    def unpack_batch(Z, N: int, m: int = 3, n: int = 3, feedback: bool = True):
        """Split packed rows ``(B, nd)`` into ``(u0 (B,m), u_ff (B,N-1,m), K (B,N-1,m,n) | None)``."""
        Z = np.atleast_2d(Z)
        B = Z.shape[0]
        u0 = Z[:, :m]
        width = m + m * n if feedback else m
        rest = Z[:, m:].reshape(B, N - 1, width)
        u_ff = rest[:, :, :m]
        K = rest[:, :, m:].reshape(B, N - 1, m, n) if feedback else None
        return u0, u_ff, K

    @classmethod
    def unpack(cls, z, N: int, m: int = 3, n: int = 3, feedback: bool = True) -> "SmpcDecision":
        u0, u_ff, K = cls.unpack_batch(np.asarray(z, dtype=float)[None], N, m, n, feedback)
        return cls(u0[0].copy(), u_ff[0].copy(), None if K is None else K[0].copy())

    @classmethod
    def hold(cls, u, N: int, n: int = 3, feedback: bool = True) -> "SmpcDecision":
        u = np.asarray(u, dtype=float)
        K = np.zeros((N - 1, u.size, n)) if feedback else None
        return cls(u.copy(), np.tile(u, (N - 1, 1)), K)

    def shift(self) -> "SmpcDecision":
        """Warm start for the next cycle: drop the applied input, repeat the last stage."""
        if self.u_ff.shape[0] == 0:
            return SmpcDecision(self.u0.copy(), self.u_ff.copy(), None if self.K is None else self.K.copy(),
                                self.shifted + 1)
        u_ff = np.concatenate([self.u_ff[1:], self.u_ff[-1:]])
        K = None if self.K is None else np.concatenate([self.K[1:], self.K[-1:]])
        return SmpcDecision(np.clip(self.u_ff[0], -1.0, 1.0), u_ff, K, self.shifted + 1)


@dataclass
class SmpcProblem:
    """One receding-horizon problem instance in normalized coordinates.

    ``x_ref`` is ``(N, n)`` for steps 1..N and ``u_ref`` ``(N, m)`` for steps 0..N-1.
    """

    x0: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    QT: np.ndarray
    variant: str
    cfg: SmpcConfig
    model: PredictionModel
    limits: object
    scenarios: ScenarioSet | None = None
    gaussian: LinearGaussianResidual | None = None
    mmd_offset: float = 0.0
    _r0: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.x0 = np.asarray(self.x0, dtype=float)
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("non-finite initial state")
        N = self.cfg.horizon
        self.x_ref = np.broadcast_to(np.asarray(self.x_ref, float), (N, self.x0.size))
        self.u_ref = np.broadcast_to(np.asarray(self.u_ref, float), (N, self.model.n_u))
        if self.variant in ("pc", "gem"):
            if self.scenarios is None:
                raise ValueError(f"variant {self.variant!r} needs a scenario set")
            self._r0 = first_step_residual(self.x0, self.scenarios, self.model)
        if self.variant == "gaussian" and self.gaussian is None:
            raise ValueError("gaussian variant needs a linear-Gaussian residual model")

    @property
    def feedback(self) -> bool:
        return self.variant != "nominal"

    @property
    def n_dec(self) -> int:
        m, n, N = self.model.n_u, self.x0.size, self.cfg.horizon
        return m + (N - 1) * (m + m * n if self.feedback else m)

    def split(self, Z):
        """Rows ``(B, nd)`` to inputs ``(B, N, m)`` and gains ``(B, N, m, n)`` (zero gain at step 0)."""
        N, m, n = self.cfg.horizon, self.model.n_u, self.x0.size
        u0, u_ff, K = SmpcDecision.unpack_batch(Z, N, m, n, self.feedback)
        U = np.concatenate([u0[:, None, :], u_ff], axis=1)
        Kf = np.zeros(U.shape + (n,))
        if K is not None:
            Kf[:, 1:] = K
        return U, Kf

    def _advance(self, i, mean, L, u, K, shared_tail=0):
        """One prediction step for a batch; returns ``(samples, mean+, L+, A1)``."""
        if self.variant == "nominal":
            m = self.model.step(mean, u, 0.0)
            return m[:, None, :], m, np.zeros_like(L), None
        if self.variant == "gaussian":
            m, Lp = gaussian_advance(i, mean, L, u, K, self.model, self.gaussian, self.cfg.jitter)
            return m[:, None, :], m, Lp, None
        return pce_advance(i, mean, L, u, K, self.scenarios, self.model, self.cfg.jitter, self._r0, shared_tail)

    def _stage(self, i, samples, mean, L, u, K, weight):
        """Cost of input ``i`` and state ``i+1`` plus their constraint penalties; returns ``(cost, viol)``."""
        cfg = self.cfg
        du = u - self.u_ref[i]
        J = np.einsum("ba,ac,bc->b", du, cfg.R, du)
        if self.variant == "gem":
            J = J + mmd_stage_cost(samples, self.x_ref[i], cfg.mmd_sigma, self._A1(i))
        else:
            W = self.QT if i == cfg.horizon - 1 else cfg.Q
            dx = mean - self.x_ref[i]
            J = J + np.einsum("ba,ac,bc->b", dx, W, dx)
            if self.feedback:
                J = J + np.einsum("ac,bak,bck->b", W, L, L) + np.einsum("ac,bak,bck->b", cfg.R, K, K)
        v = tightened_violation(self.limits.Gx, self.limits.gx, mean, L, cfg.eps_state)
        if i > 0:
            v = np.concatenate([v, tightened_violation(self.limits.Gu, self.limits.gu, u, K, cfg.eps_input)], 1)
        J = J + weight * np.sum(v * v, axis=1)
        return J, v.max(axis=1)

    def _A1(self, i):
        return self.scenarios.proj0.A1 if i == 0 else self.scenarios.proj.A1

    def _run(self, s, mean, L, U, K, weight, keep=False):
        """Roll out from step ``s``; returns per-stage costs ``(B, N-s)``, violations and moments."""
        N = self.cfg.horizon
        B = U.shape[0]
        mean = np.broadcast_to(mean, (B,) + mean.shape[-1:])
        L = np.broadcast_to(L, (B,) + L.shape[-2:])
        costs = np.empty((B, N - s))
        viol = np.empty((B, N - s))
        moments = [(mean, L)]
        for i in range(s, N):
            X, mean, L, _ = self._advance(i, mean, L, U[:, i], K[:, i])
            costs[:, i - s], viol[:, i - s] = self._stage(i, X, mean, L, U[:, i], K[:, i], weight)
            if keep:
                moments.append((mean, L))
        return costs, viol, moments

    def evaluate(self, Z, weight: float):
        """Penalized objective and maximal tightened violation for each row of ``Z``."""
        U, K = self.split(np.atleast_2d(Z))
        n = self.x0.size
        costs, viol, _ = self._run(0, self.x0[None], np.zeros((1, n, n)), U, K, weight)
        J = costs.sum(axis=1) + self._offset_total
        return np.where(np.isfinite(J), J, np.inf), viol.max(axis=1)

    @property
    def _offset_total(self) -> float:
        # constant stage terms are added after differencing so they cannot perturb the gradient
        return self.cfg.horizon * self.mmd_offset if self.variant == "gem" else 0.0

    def value_and_grad(self, z, weight: float, h: float):
        """Objective and central-difference gradient.

        Perturbations of step-``s`` variables leave steps before ``s`` untouched,
        so their rows join the batch at step ``s`` with the unperturbed moments
        and accumulated cost of row 0.
        """
        N, m, n = self.cfg.horizon, self.model.n_u, self.x0.size
        width = m + m * n if self.feedback else m
        sizes = [m] + [width] * (N - 1)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        rows = [z[None]]
        for s in range(N):
            idx = np.arange(offsets[s], offsets[s + 1])
            E = np.zeros((idx.size, z.size))
            E[np.arange(idx.size), idx] = h
            rows += [z + E, z - E]
        Z = np.vstack(rows)
        U, K = self.split(Z)
        first = 1 + np.concatenate([[0], np.cumsum(2 * np.asarray(sizes))])  # group s rows: first[s]:first[s+1]
        acc = np.zeros(Z.shape[0])
        mean = self.x0[None]
        L = np.zeros((1, n, n))
        viol = 0.0
        for i in range(N):
            k = first[i + 1] - first[i]
            mean = np.concatenate([mean, np.broadcast_to(mean[0], (k, n))])
            L = np.concatenate([L, np.broadcast_to(L[0], (k, n, n))])
            hi = first[i + 1]
            acc[first[i]:hi] = acc[0]
            X, mean, L, _ = self._advance(i, mean, L, U[:hi, i], K[:hi, i], shared_tail=k)
            c, v = self._stage(i, X, mean, L, U[:hi, i], K[:hi, i], weight)
            acc[:hi] += c
            viol = max(viol, v[0])
        f = acc[0] + self._offset_total
        g = np.empty(z.size)
        for s in range(N):
            lo = first[s]
            d = sizes[s]
            g[offsets[s]:offsets[s + 1]] = (acc[lo:lo + d] - acc[lo + d:lo + 2 * d]) / (2.0 * h)
        if not np.isfinite(f):
            f = np.inf
        return f, g, viol


@dataclass
class SolveInfo:
    objective: float
    objective_trace: list
    max_violation: float
    iterations: int
    degraded: bool
    message: str = ""


class _Stop(Exception):
    pass


def solve(problem: SmpcProblem, warm: SmpcDecision | None = None):
    """Penalty outer loop around L-BFGS-B; returns ``(decision, SolveInfo)``.

    Never raises on non-convergence: the best iterate is returned with
    ``degraded=True``.
    """
    cfg = problem.cfg
    N, m, n = cfg.horizon, problem.model.n_u, problem.x0.size
    if warm is None:
        warm = SmpcDecision.hold(problem.u_ref[0], N, n, problem.feedback)
    elif (warm.K is not None) != problem.feedback or warm.horizon != N:
        raise ValueError("warm start does not match the problem structure")
    z = warm.pack()
    z[:m] = np.clip(z[:m], -1.0, 1.0)
    bounds = [(-1.0, 1.0)] * m + [(None, None)] * (z.size - m)
    weight = cfg.penalty_weight
    trace, iters, degraded, msg = [], 0, False, ""
    viol = np.inf
    for _ in range(cfg.outer_iters):
        f0, _, viol0 = problem.value_and_grad(z, weight, cfg.fd_step)
        state = {"x": z.copy(), "f": f0, "v": viol0}

        def fun(v):
            f, g, vi = problem.value_and_grad(v, weight, cfg.fd_step)
            if f < state["f"]:
                state.update(x=v.copy(), f=f, v=vi)
            state["last"] = (v.copy(), f)
            return f, g

        prev = {"x": z.copy(), "fs": [f0], "nit": 0}

        def cb(xk):
            # absolute stopping tests, so a constant objective offset cannot change the iterate
            prev["nit"] += 1
            lx, lf = state["last"]
            f = lf if np.array_equal(lx, xk) else problem.evaluate(xk, weight)[0][0]
            if np.linalg.norm(xk - prev["x"]) <= cfg.xtol:
                raise _Stop("step norm below tolerance")
            fs = prev["fs"]
            fs.append(f)
            if len(fs) > cfg.stall_window and fs[-1 - cfg.stall_window] - f <= cfg.ftol:
                raise _Stop("objective stalled")
            prev["x"] = xk.copy()

        try:
            res = minimize(fun, z, jac=True, method="L-BFGS-B", bounds=bounds, callback=cb,
                           options={"maxiter": cfg.inner_iters, "gtol": cfg.gtol, "ftol": 0.0})
            iters += res.nit
            msg = str(res.message)
            if res.nit >= cfg.inner_iters:
                degraded = True
        except _Stop as e:
            iters += prev["nit"]
            msg = str(e)
        z, viol = state["x"], state["v"]
        trace.append(float(state["f"]))
        if viol <= cfg.violation_tol:
            break
        weight *= cfg.penalty_growth
    if not np.isfinite(trace[-1]):
        degraded = True
    if viol > cfg.violation_tol:
        degraded = True
    d = SmpcDecision.unpack(z, N, m, n, problem.feedback)
    d.u0 = np.clip(d.u0, -1.0, 1.0)
    return d, SolveInfo(trace[-1], trace, float(viol), iters, degraded, msg)
