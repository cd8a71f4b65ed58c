"""Receding-horizon controller wrapping the solver for the surrogate engine."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..engine import (ControlInput, EngineState, OperatingLimits, PlantCoefficients, denormalize_input,
                      equilibrium, normalize_state, reference_profile, step_normalized)
from .config import SmpcConfig
from .propagation import LinearGaussianResidual, PredictionModel, ScenarioSet, wae_residual
from .solver import VARIANTS, SmpcDecision, SmpcProblem, solve
from .terminal import linearize, terminal_weight


@dataclass(frozen=True)
class ControllerVariant:
    """Controller tag plus the uncertainty model it needs."""

    tag: str
    wae: object = None
    gaussian: LinearGaussianResidual | None = None

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown controller {self.tag!r}; expected one of {VARIANTS}")
        if self.tag in ("pc", "gem") and self.wae is None:
            raise ValueError(f"controller {self.tag!r} needs a trained generative model")
        if self.tag == "gaussian" and self.gaussian is None:
            raise ValueError("controller 'gaussian' needs a linear-Gaussian residual fit")


@dataclass
class StepRecord:
    input: ControlInput
    degraded: bool
    solve_ms: float
    objective: float
    max_violation: float


class SmpcController:
    """Stateful controller: caches references and terminal weights, keeps the warm start."""

    def __init__(self, variant: ControllerVariant, cfg: SmpcConfig = SmpcConfig(),
                 scenarios: ScenarioSet | None = None, coef: PlantCoefficients = PlantCoefficients(),
                 limits: OperatingLimits | None = None):
        self.variant = variant
        self.cfg = cfg
        self.coef = coef
        self.limits = limits or OperatingLimits.from_boxes()
        residual = wae_residual(variant.wae) if variant.tag in ("pc", "gem") else None
        self.model = PredictionModel.engine(residual, coef)
        if variant.tag in ("pc", "gem") and scenarios is None:
            scenarios = ScenarioSet.build()
        self.scenarios = scenarios
        self._refs: dict = {}
        self.warm: SmpcDecision | None = None

    def reset(self):
        self.warm = None

    def reference(self, ca50: float, imep: float):
        """Normalized equilibrium ``(x_ref, u_ref, QT)`` for a reference pair (cached)."""
        key = (float(ca50), float(imep))
        if key not in self._refs:
            x_phys, u = equilibrium(ca50, imep, self.coef, tuple(np.diag(self.cfg.R)))
            x = normalize_state(x_phys)
            if self.cfg.QT is not None:
                QT = np.asarray(self.cfg.QT, dtype=float)
            else:
                A, B = linearize(lambda xx, uu: step_normalized(xx, uu, 0.0, self.coef), x, u)
                _, QT = terminal_weight(self.cfg.Q, self.cfg.R, A, B)
            self._refs[key] = (x, u, QT)
        return self._refs[key]

    def problem(self, x_norm, cycle: int) -> SmpcProblem:
        N = self.cfg.horizon
        # the first predicted state is the outcome of the current cycle
        refs = [self.reference(*reference_profile(cycle + i)) for i in range(N)]
        return SmpcProblem(x_norm, np.array([r[0] for r in refs]), np.array([r[1] for r in refs]),
                           refs[-1][2], self.variant.tag, self.cfg, self.model, self.limits,
                           self.scenarios, self.variant.gaussian)

    def step(self, x: EngineState, cycle: int) -> StepRecord:
        t0 = time.perf_counter()
        prob = self.problem(normalize_state(x), cycle)
        d, info = solve(prob, self.warm)
        self.warm = d.shift()
        u = denormalize_input(np.clip(d.u0, -1.0, 1.0)).clamped()
        return StepRecord(u, info.degraded, 1e3 * (time.perf_counter() - t0), info.objective, info.max_violation)


def controller_step(controller: SmpcController, x: EngineState, cycle: int) -> ControlInput:
    return controller.step(x, cycle).input
