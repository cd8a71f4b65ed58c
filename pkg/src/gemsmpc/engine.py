"""Surrogate HCCI engine plant, ground-truth residual process and data generation.

States are (CA50 [degCA], IMEP [bar], DPmax [bar/degCA]) and inputs are
(NVO [degCA], fuel [ms], ethanol [ms]). Every function that draws random
numbers takes an explicit ``numpy.random.Generator``.

The normalized coordinates used by the controllers map each constraint-box
interval affinely onto [-1, 1]; the residual of a state component is scaled by
the same half-width (no offset), so that ``x_n+ = f_n(x_n, u_n) + r_n``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

# (lower, upper) per component
STATE_BOX = np.array([[2.0, 13.0], [2.0, 4.5], [0.0, 5.0]])
INPUT_BOX = np.array([[172.0, 232.0], [0.5, 0.97], [0.0, 0.4]])

STATE_CENTER = STATE_BOX.mean(axis=1)
STATE_HALF = 0.5 * (STATE_BOX[:, 1] - STATE_BOX[:, 0])
INPUT_CENTER = INPUT_BOX.mean(axis=1)
INPUT_HALF = 0.5 * (INPUT_BOX[:, 1] - INPUT_BOX[:, 0])

CA50_SETPOINT = 7.0
IMEP_PHASES = (2.8, 2.2, 3.2, 3.9)
PHASE_LENGTH = 30

DATASET_HEADER = ("ca50_n", "imep_n", "dpmax_n", "r_ca50_n", "r_imep_n")


@dataclass(frozen=True)
class EngineState:
    ca50: float
    imep: float
    dpmax: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ca50, self.imep, self.dpmax], dtype=float)

    @classmethod
    def from_array(cls, a) -> "EngineState":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ControlInput:
    nvo: float
    fuel: float
    eth: float

    def as_array(self) -> np.ndarray:
        return np.array([self.nvo, self.fuel, self.eth], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ControlInput":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def clamped(self) -> "ControlInput":
        return ControlInput.from_array(np.clip(self.as_array(), INPUT_BOX[:, 0], INPUT_BOX[:, 1]))


@dataclass(frozen=True)
class PlantCoefficients:
    """Coefficients of the saturating surrogate drift.

    ``ca50+ = c0 + ca_amp * tanh(z / ca_amp)`` with
    ``z = ca_self*(ca50-c0) + ca_nvo*n + ca_fuel*f + ca_eth*e + ca_cross*(ca50-c0)*n``
    and analogously for IMEP; DPmax is an affine function of the
    post-residual CA50/IMEP, floored at zero.
    """

    ca_center: float = 7.0
    ca_amp: float = 6.0
    ca_self: float = 0.3
    ca_nvo: float = -4.0
    ca_fuel: float = -2.0
    ca_eth: float = 3.0
    ca_cross: float = 0.2
    imep_center: float = 3.25
    imep_amp: float = 1.25
    imep_self: float = 0.25
    imep_fuel: float = 1.6
    imep_eth: float = 0.4
    imep_ca_quad: float = -0.005
    dp_base: float = 2.5
    dp_imep: float = 0.8
    dp_ca: float = -0.25


@dataclass(frozen=True)
class ResidualCoefficients:
    """State-dependent skewed, correlated residual generator.

    ``r_ca50 = s1(x) * (w1 + gamma(x) * (w1**2 - 1))``,
    ``r_imep = s2(x) * (rho * w1 + sqrt(1 - rho**2) * w2)``.
    """

    s1_base: float = 0.8
    s1_ca_gain: float = 0.6
    s1_ca_mid: float = 10.0
    s1_ca_width: float = 1.5
    s1_imep_gain: float = 0.4
    s1_imep_mid: float = 2.6
    s1_imep_width: float = 0.2
    skew_gain: float = 0.3
    skew_ca_mid: float = 9.0
    skew_ca_width: float = 1.5
    s2_base: float = 0.05
    s2_ca_gain: float = 0.03
    s2_ca_mid: float = 10.0
    s2_ca_width: float = 1.5
    rho: float = -0.5


@dataclass(frozen=True)
class OperatingLimits:
    """Halfspace description ``G x <= g`` of the state and input boxes."""

    Gx: np.ndarray
    gx: np.ndarray
    Gu: np.ndarray
    gu: np.ndarray

    @classmethod
    def from_boxes(cls, state_box=STATE_BOX, input_box=INPUT_BOX, normalized: bool = True):
        """Build one row per bound; in normalized coordinates every bound is +-1."""
        def rows(box, center, half):
            n = box.shape[0]
            G = np.vstack([np.eye(n), -np.eye(n)])
            if normalized:
                lo = (box[:, 0] - center) / half
                hi = (box[:, 1] - center) / half
            else:
                lo, hi = box[:, 0], box[:, 1]
            return G, np.concatenate([hi, -lo])

        Gx, gx = rows(np.asarray(state_box, float), STATE_CENTER, STATE_HALF)
        Gu, gu = rows(np.asarray(input_box, float), INPUT_CENTER, INPUT_HALF)
        return cls(Gx, gx, Gu, gu)


# ---------------------------------------------------------------- normalization

def normalize_state(s) -> np.ndarray:
    """Map a state (EngineState or array (..., 3)) box-wise onto [-1, 1]."""
    a = s.as_array() if isinstance(s, EngineState) else np.asarray(s, dtype=float)
    return (a - STATE_CENTER) / STATE_HALF


def denormalize_state(v, as_state: bool = True):
    a = np.asarray(v, dtype=float) * STATE_HALF + STATE_CENTER
    if as_state and a.ndim == 1:
        return EngineState.from_array(a)
    return a


def normalize_input(u) -> np.ndarray:
    a = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    return (a - INPUT_CENTER) / INPUT_HALF


def denormalize_input(v, as_input: bool = True):
    a = np.asarray(v, dtype=float) * INPUT_HALF + INPUT_CENTER
    if as_input and a.ndim == 1:
        return ControlInput.from_array(a)
    return a


def normalize_residual(r) -> np.ndarray:
    return np.asarray(r, dtype=float) / STATE_HALF[:2]


def denormalize_residual(r) -> np.ndarray:
    return np.asarray(r, dtype=float) * STATE_HALF[:2]


# ---------------------------------------------------------------- dynamics

def _sig(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def drift(x, un, coef: PlantCoefficients = PlantCoefficients()) -> np.ndarray:
    """Pre-residual CA50/IMEP for physical states ``x`` (..., 3) and normalized inputs ``un`` (..., 3).

    Returns an array (..., 2). Inputs are not clamped here.
    """
    x = np.asarray(x, dtype=float)
    un = np.asarray(un, dtype=float)
    dca = x[..., 0] - coef.ca_center
    n, f, e = un[..., 0], un[..., 1], un[..., 2]
    z_ca = coef.ca_self * dca + coef.ca_nvo * n + coef.ca_fuel * f + coef.ca_eth * e + coef.ca_cross * dca * n
    z_im = (coef.imep_self * (x[..., 1] - coef.imep_center) + coef.imep_fuel * f + coef.imep_eth * e
            + coef.imep_ca_quad * dca**2)
    ca = coef.ca_center + coef.ca_amp * np.tanh(z_ca / coef.ca_amp)
    im = coef.imep_center + coef.imep_amp * np.tanh(z_im / coef.imep_amp)
    return np.stack([ca, im], axis=-1)


def dpmax_of(ca50, imep, coef: PlantCoefficients = PlantCoefficients()):
    return np.maximum(0.0, coef.dp_base + coef.dp_imep * (imep - coef.imep_center)
                      + coef.dp_ca * (ca50 - coef.ca_center))


def next_state(x, un, r, coef: PlantCoefficients = PlantCoefficients()) -> np.ndarray:
    """Physical next state given physical residual ``r`` (..., 2)."""
    ci = drift(x, un, coef) + np.asarray(r, dtype=float)
    return np.concatenate([ci, dpmax_of(ci[..., 0], ci[..., 1], coef)[..., None]], axis=-1)


def step_normalized(xn, un, rn, coef: PlantCoefficients = PlantCoefficients()) -> np.ndarray:
    """Prediction model in normalized coordinates: ``x_n+ = f_n(x_n, u_n) + r_n``.

    ``rn`` is the normalized CA50/IMEP residual (or 0). Broadcasts over leading axes.
    """
    x = np.asarray(xn, dtype=float) * STATE_HALF + STATE_CENTER
    xp = next_state(x, un, np.asarray(rn, dtype=float) * STATE_HALF[:2], coef)
    return (xp - STATE_CENTER) / STATE_HALF


def residual_scales(x, coef: ResidualCoefficients = ResidualCoefficients()):
    """Return ``(sigma1, gamma, sigma2)`` for physical states ``x`` (..., >=2)."""
    x = np.asarray(x, dtype=float)
    ca, im = x[..., 0], x[..., 1]
    s1 = (coef.s1_base + coef.s1_ca_gain * _sig((ca - coef.s1_ca_mid) / coef.s1_ca_width)
          + coef.s1_imep_gain * _sig((coef.s1_imep_mid - im) / coef.s1_imep_width))
    gam = coef.skew_gain * _sig((ca - coef.skew_ca_mid) / coef.skew_ca_width)
    s2 = coef.s2_base + coef.s2_ca_gain * _sig((ca - coef.s2_ca_mid) / coef.s2_ca_width)
    return s1, gam, s2


def true_residual(x, w, coef: ResidualCoefficients = ResidualCoefficients()) -> np.ndarray:
    """Ground-truth residual g(x, w) in physical units; ``w`` has shape (..., 2)."""
    w = np.asarray(w, dtype=float)
    s1, gam, s2 = residual_scales(x, coef)
    w1, w2 = w[..., 0], w[..., 1]
    r1 = s1 * (w1 + gam * (w1**2 - 1.0))
    r2 = s2 * (coef.rho * w1 + np.sqrt(1.0 - coef.rho**2) * w2)
    return np.stack([r1, r2], axis=-1)


def true_residual_sample(x, rng: np.random.Generator,
                         coef: ResidualCoefficients = ResidualCoefficients()) -> np.ndarray:
    x = x.as_array() if isinstance(x, EngineState) else np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite state {x!r}")
    w = rng.standard_normal(x.shape[:-1] + (2,))
    return true_residual(x, w, coef)


def plant_step(x: EngineState, u: ControlInput, rng: np.random.Generator | None,
               coef: PlantCoefficients = PlantCoefficients(),
               rcoef: ResidualCoefficients = ResidualCoefficients(),
               residual: bool = True) -> EngineState:
    """Advance the surrogate plant by one engine cycle.

    The input is clamped to the hard box. With ``residual=False`` (or no
    generator) the deterministic drift is returned.
    """
    xa = x.as_array()
    if not np.all(np.isfinite(xa)):
        raise ValueError(f"plant_step: non-finite state {xa!r}")
    un = normalize_input(u.clamped())
    if residual and rng is not None:
        r = true_residual_sample(xa, rng, rcoef)
    else:
        r = np.zeros(2)
    return EngineState.from_array(next_state(xa, un, r, coef))


# ---------------------------------------------------------------- references

def reference_profile(cycle: int) -> tuple[float, float]:
    """CA50 setpoint and IMEP reference for a given cycle (last phase repeats)."""
    if cycle < 0:
        raise ValueError(f"cycle must be non-negative, got {cycle}")
    phase = min(cycle // PHASE_LENGTH, len(IMEP_PHASES) - 1)
    return CA50_SETPOINT, IMEP_PHASES[phase]


def equilibrium(ca50: float, imep: float, coef: PlantCoefficients = PlantCoefficients(),
                input_weights=(0.2, 1.0, 0.5)) -> tuple[np.ndarray, np.ndarray]:
    """Residual-free steady state with the given CA50/IMEP.

    Among the inputs that hold the state, returns the one with the smallest
    weighted norm in normalized coordinates. Returns ``(x_phys, u_norm)``.
    """
    from scipy.optimize import minimize

    x = np.array([ca50, imep, float(dpmax_of(ca50, imep, coef))])
    Rw = np.asarray(input_weights, dtype=float)

    def cons(un):
        return drift(x, un, coef) - x[:2]

    res = minimize(lambda un: float(np.sum(Rw * un**2)), np.zeros(3), jac=lambda un: 2 * Rw * un,
                   constraints=[{"type": "eq", "fun": cons}], bounds=[(-1.0, 1.0)] * 3,
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 200})
    if not res.success or np.max(np.abs(cons(res.x))) > 1e-8:
        raise ValueError(f"no equilibrium input for ca50={ca50}, imep={imep}: {res.message}")
    return x, res.x


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class DatasetRecord:
    state: np.ndarray  # normalized (3,)
    residual: np.ndarray  # normalized (2,)


@dataclass
class Dataset:
    """Normalized (state, residual) pairs stored column-wise."""

    states: np.ndarray
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Dataset(self.states[i], self.residuals[i], dict(self.meta))
        return DatasetRecord(self.states[i], self.residuals[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        return self[:n_train], self[n_train:]

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(DATASET_HEADER)
            for s, r in zip(self.states, self.residuals):
                wr.writerow([f"{v:.9g}" for v in (*s, *r)])
        meta = {"format_version": FORMAT_VERSION, **self.meta}
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != DATASET_HEADER:
                raise ValueError(f"{path}: unexpected dataset header {header}")
            rows = np.array([[float(v) for v in row] for row in rd], dtype=float).reshape(-1, 5)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(rows[:, :3], rows[:, 3:], meta)


def excitation_inputs(n: int, rng: np.random.Generator, alpha: float = 0.7,
                      redraw_prob: float = 0.2) -> np.ndarray:
    """Low-pass filtered random inputs (normalized), with targets redrawn at random times."""
    out = np.empty((n, 3))
    target = rng.uniform(-1.0, 1.0, 3)
    u = target.copy()
    for t in range(n):
        redraw = rng.uniform(size=3) < redraw_prob
        target = np.where(redraw, rng.uniform(-1.0, 1.0, 3), target)
        u = alpha * u + (1.0 - alpha) * target
        out[t] = u
    return out


def generate_dataset(n: int, seed: int, coef: PlantCoefficients = PlantCoefficients(),
                     rcoef: ResidualCoefficients = ResidualCoefficients(),
                     alpha: float = 0.7, redraw_prob: float = 0.2) -> Dataset:
    """Simulate the plant under random excitation and record normalized (state, residual) pairs."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    meta = {"seed": seed, "n": n, "plant": asdict(coef), "residual": asdict(rcoef),
            "excitation": {"alpha": alpha, "redraw_prob": redraw_prob}}
    if n == 0:
        return Dataset(np.empty((0, 3)), np.empty((0, 2)), meta)
    U = excitation_inputs(n, rng, alpha, redraw_prob)
    x, _ = equilibrium(CA50_SETPOINT, IMEP_PHASES[0], coef)
    states = np.empty((n, 3))
    res = np.empty((n, 2))
    for t in range(n):
        r = true_residual(x, rng.standard_normal(2), rcoef)
        states[t] = x
        res[t] = r
        x = next_state(x, U[t], r, coef)
    meta["input_min"] = U.min(axis=0).tolist()
    meta["input_max"] = U.max(axis=0).tolist()
    return Dataset(normalize_state(states), normalize_residual(res), meta)
