from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _diag(*v):
    return field(default_factory=lambda: np.diag(np.array(v, dtype=float)))


@dataclass(frozen=True)
class SmpcConfig:
    """Controller settings; all weights act on normalized coordinates.

    ``QT=None`` means the terminal weight is computed from the linearized
    model at the current reference. ``eps_state``/``eps_input`` enter the
    Cantelli back-off ``sqrt((1 - eps) / eps)``.
    """

    horizon: int = 4
    eps_state: float = 0.95
    eps_input: float = 0.95
    Q: np.ndarray = _diag(10.0, 10.0, 0.1)
    R: np.ndarray = _diag(0.2, 1.0, 0.5)
    QT: np.ndarray | None = None
    mmd_sigma: float = 2.5
    penalty_weight: float = 100.0
    penalty_growth: float = 10.0
    outer_iters: int = 3
    inner_iters: int = 60
    fd_step: float = 1e-5
    gtol: float = 1e-4
    xtol: float = 1e-7
    ftol: float = 4e-5  # stop when the last ``stall_window`` iterations gained less than this
    stall_window: int = 3
    violation_tol: float = 1e-4
    jitter: float = 1e-9

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("eps_state", "eps_input"):
            e = getattr(self, name)
            if not 0.0 < e < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {e}")
        for name in ("Q", "R", "QT"):
            if getattr(self, name) is None:
                continue
            M = np.asarray(getattr(self, name))
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
        if np.linalg.eigvalsh(np.asarray(self.R)).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.jitter <= 0 or self.mmd_sigma <= 0:
            raise ValueError("jitter and mmd_sigma must be > 0")


# published terminal weight for the full engine model; the surrogate does not reproduce it
PUBLISHED_QT = np.array([[10.32, 0.65, -0.04],
                        [0.65, 11.4, -0.15],
                        [-0.04, -0.15, 0.18]])
