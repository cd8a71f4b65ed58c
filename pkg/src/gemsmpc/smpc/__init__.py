"""Stochastic MPC with scenario/PCE moment propagation."""

from .chance import cantelli_kappa, chance_penalty_input, chance_penalty_state, tightened_violation
from .config import PUBLISHED_QT, SmpcConfig
from .controller import ControllerVariant, SmpcController, StepRecord, controller_step
from .objective import mmd_chi, mmd_stage_cost, quadratic_cost
from .propagation import (LinearGaussianResidual, MomentState, PredictionModel, ScenarioSet, forward_rollout,
                          gaussian_residual_fit, gaussian_rollout_batch, nominal_rollout_batch,
                          pce_rollout_batch, propagate_step, wae_residual)
from .solver import VARIANTS, SmpcDecision, SmpcProblem, SolveInfo, solve
from .terminal import linearize, riccati_gain, terminal_weight
