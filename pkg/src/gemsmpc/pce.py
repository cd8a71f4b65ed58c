"""Non-intrusive Hermite polynomial chaos: basis, regularized regression operators, moments."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class MultiIndexSet:
    dim: int
    degree: int
    indices: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.indices)

    @property
    def total_degrees(self) -> np.ndarray:
        return np.array([sum(a) for a in self.indices], dtype=int)

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int).reshape(len(self), self.dim)


def multi_index_set(dim: int, degree: int) -> MultiIndexSet:
    """All exponent tuples of total degree <= ``degree``, graded-lexicographic order.

    Within one total degree, tuples are sorted lexicographically descending, so
    in two dimensions the order is (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
    """
    if dim < 1 or degree < 0:
        raise ValueError(f"need dim >= 1 and degree >= 0, got ({dim}, {degree})")
    out = []
    for d in range(degree + 1):
        level = set()
        for combo in combinations_with_replacement(range(dim), d):
            a = [0] * dim
            for i in combo:
                a[i] += 1
            level.add(tuple(a))
        out.extend(sorted(level, reverse=True))
    return MultiIndexSet(dim, degree, tuple(out))


def hermite_orthonormal(n: int, t):
    """Probabilists' Hermite polynomial He_n(t) / sqrt(n!)."""
    if n < 0:
        raise ValueError("degree must be >= 0")
    return _hermite_table(np.asarray(t, dtype=float), n)[n]


def _hermite_table(t: np.ndarray, nmax: int) -> np.ndarray:
    """Orthonormal Hermite values for degrees 0..nmax, shape (nmax+1, *t.shape)."""
    H = np.empty((nmax + 1,) + t.shape)
    H[0] = 1.0
    if nmax >= 1:
        H[1] = t
    for k in range(1, nmax):
        H[k + 1] = t * H[k] - k * H[k - 1]
    norms = np.sqrt([math.factorial(k) for k in range(nmax + 1)])
    return H / norms.reshape((-1,) + (1,) * t.ndim)


def eval_basis(mis: MultiIndexSet, w) -> np.ndarray:
    """Tensor-product basis values. ``w`` is (n_w,) or (N, n_w); returns (P,) or (N, P)."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    W = np.atleast_2d(w)
    if W.shape[1] != mis.dim:
        raise ValueError(f"expected points of dimension {mis.dim}, got {W.shape[1]}")
    H = _hermite_table(W, mis.degree)  # (p+1, N, n_w)
    alpha = mis.as_array()
    cols = np.arange(mis.dim)
    # H[alpha[k, i], :, i] -> (P, n_w, N)
    vals = H[alpha, :, cols[None, :]]
    Phi = np.prod(vals, axis=1).T
    return Phi[0] if single else Phi


@dataclass(frozen=True)
class PceConfig:
    """Regression settings for one projection operator.

    ``degree_weights[d]`` is the diagonal entry of the regularization matrix for
    every basis function of total degree ``d``. ``weighting`` selects the sample
    weights: ``"density"`` uses the joint standard-normal density as the
    diagonal of the squared weight matrix, ``"uniform"`` uses the identity.
    """

    n_samples: int
    scale: float
    degree_weights: tuple[float, ...]
    seed: int = 0
    weighting: str = "density"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if any(v < 0 for v in self.degree_weights):
            raise ValueError("degree weights must be >= 0")
        if self.weighting not in ("density", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


# settings of the two projection operators used by the controller
STEP0_CONFIG = PceConfig(n_samples=20, scale=200.0, degree_weights=(1.0, 0.3, 0.1, 0.03), seed=11)
STEPI_CONFIG = PceConfig(n_samples=45, scale=2000.0, degree_weights=(1.0, 0.3, 0.1), seed=12)


@dataclass(frozen=True)
class PceProjection:
    mis: MultiIndexSet
    points: np.ndarray  # (N_w, n_w)
    Phi: np.ndarray  # (N_w, P)
    A: np.ndarray  # (P, N_w)
    config: PceConfig | None = field(default=None, compare=False)

    @property
    def A1(self) -> np.ndarray:
        return self.A[0]

    def save(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "dim": self.mis.dim,
            "degree": self.mis.degree,
            "multi_indices": [list(a) for a in self.mis.indices],
            "points": self.points.tolist(),
            "A": self.A.tolist(),
        }
        if self.config is not None:
            c = self.config
            doc["config"] = {"n_samples": c.n_samples, "scale": c.scale,
                             "degree_weights": list(c.degree_weights), "seed": c.seed,
                             "weighting": c.weighting}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "PceProjection":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported projection format {doc.get('format_version')}")
        mis = MultiIndexSet(doc["dim"], doc["degree"], tuple(tuple(a) for a in doc["multi_indices"]))
        points = np.array(doc["points"], dtype=float).reshape(-1, mis.dim)
        cfg = None
        if "config" in doc:
            c = doc["config"]
            cfg = PceConfig(c["n_samples"], c["scale"], tuple(c["degree_weights"]), c["seed"], c["weighting"])
        return cls(mis, points, eval_basis(mis, points), np.array(doc["A"], dtype=float), cfg)


def draw_points(dim: int, cfg: PceConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    return rng.standard_normal((cfg.n_samples, dim))


def sample_weights(points: np.ndarray, weighting: str) -> np.ndarray:
    """Diagonal of the squared sample-weight matrix."""
    if weighting == "uniform":
        return np.ones(points.shape[0])
    d = points.shape[1]
    return np.exp(-0.5 * np.sum(points**2, axis=1)) / (2.0 * np.pi) ** (d / 2)


def _regularization_diag(mis: MultiIndexSet, cfg: PceConfig) -> np.ndarray:
    if len(cfg.degree_weights) < mis.degree + 1:
        raise ValueError(f"need {mis.degree + 1} degree weights, got {len(cfg.degree_weights)}")
    return np.asarray(cfg.degree_weights, dtype=float)[mis.total_degrees]


def build_projection(mis: MultiIndexSet, cfg: PceConfig, points=None) -> PceProjection:
    """Regularized weighted least-squares operator by direct inversion of the P x P normal matrix."""
    pts = draw_points(mis.dim, cfg) if points is None else np.asarray(points, dtype=float)
    Phi = eval_basis(mis, pts)
    g2 = cfg.scale * sample_weights(pts, cfg.weighting)
    wdiag = _regularization_diag(mis, cfg)
    M = Phi.T @ (g2[:, None] * Phi) + np.diag(wdiag**2)
    rhs = Phi.T * g2[None, :]
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise np.linalg.LinAlgError(
            f"singular normal matrix (P={len(mis)}, N_w={pts.shape[0]}); add regularization or samples")
    A = np.linalg.solve(M, rhs)
    return PceProjection(mis, pts, Phi, A, cfg)


def build_projection_woodbury(mis: MultiIndexSet, cfg: PceConfig, points=None) -> PceProjection:
    """Same operator as :func:`build_projection`, inverting an N_w x N_w matrix instead."""
    pts = draw_points(mis.dim, cfg) if points is None else np.asarray(points, dtype=float)
    wdiag = _regularization_diag(mis, cfg)
    if np.any(wdiag <= 0):
        raise ValueError("Woodbury path requires strictly positive regularization weights")
    Phi = eval_basis(mis, pts)
    g2 = cfg.scale * sample_weights(pts, cfg.weighting)
    gam = np.sqrt(g2)  # includes the scale
    winv2 = 1.0 / wdiag**2
    GP = gam[:, None] * Phi  # Gamma Phi, (N, P)
    inner = np.eye(pts.shape[0]) + (GP * winv2[None, :]) @ GP.T
    # (GP^T GP + W^2)^-1 = W^-2 - W^-2 GP^T inner^-1 GP W^-2, and multiplying by GP^T
    # collapses to W^-2 GP^T inner^-1
    A =(winv2[:, None] * GP.T) @ np.linalg.solve(inner, np.diag(gam))
    return PceProjection(mis, pts, Phi, A, cfg)


def project_samples(proj: PceProjection, outputs) -> np.ndarray:
    """Coefficient matrix ``A @ outputs``; ``outputs`` is (N_w,) or (..., N_w, d)."""
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        if Y.shape[0] != proj.A.shape[1]:
            raise ValueError(f"expected {proj.A.shape[1]} rows, got {Y.shape[0]}")
        return proj.A @ Y
    if Y.shape[-2] != proj.A.shape[1]:
        raise ValueError(f"expected {proj.A.shape[1]} rows, got {Y.shape[-2]}")
    return proj.A @ Y


def pce_mean(c) -> np.ndarray:
    return np.asarray(c)[..., 0, :] if np.ndim(c) >= 2 else np.asarray(c)[0]


def pce_covariance(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        return np.array([[np.sum(c[1:] ** 2)]])
    X = c[..., 1:, :]
    return np.swapaxes(X, -1, -2) @ X
