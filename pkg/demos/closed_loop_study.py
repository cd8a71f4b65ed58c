"""Small closed-loop comparison of the four controllers.

Usage: python demos/closed_loop_study.py [runs] [cycles]

Trains a generative model on the 40000-record training split, runs every controller on
the same plant-noise seeds and writes a table plus an SVG of mean +- std
trajectories to ./demo_results. The acceptance suite runs the 10 x 120 version.
"""

# %%
import sys
from pathlib import Path

from gemsmpc.engine import generate_dataset
from gemsmpc.harness import RunConfig, emit_plot, make_controller, monte_carlo
from gemsmpc.smpc import ControllerVariant, ScenarioSet, gaussian_residual_fit
from gemsmpc.wae import TrainConfig, wae_train

runs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
cycles = int(sys.argv[2]) if len(sys.argv) > 2 else 60
out = Path("demo_results")
out.mkdir(exist_ok=True)

# %% uncertainty models
train, _ = generate_dataset(50000, seed=0).split(40000)
model = wae_train(train, TrainConfig())
variants = {
    "nominal": ControllerVariant("nominal"),
    "gaussian": ControllerVariant("gaussian", gaussian=gaussian_residual_fit(train.states, train.residuals)),
    "pc": ControllerVariant("pc", wae=model),
    "gem": ControllerVariant("gem", wae=model),
}
scen = ScenarioSet.build()

# %% closed loop
logs = {}
print("| controller | variance | ratio(>=13) | RMSE-CA50 | RMSE-IMEP | ms/solve |")
for tag, var in variants.items():
    cfg = RunConfig(controller=tag, cycles=cycles, runs=runs, base_seed=1000)
    log, rep = monte_carlo(cfg, make_controller(cfg, var, scen if tag in ("pc", "gem") else None))
    logs[tag] = log
    print(f"| {tag} | {rep.variance:.3f} | {rep.ratio_ge13:.2%} | {rep.rmse_ca50:.4f} | {rep.rmse_imep:.4f} "
          f"| {rep.mean_solve_ms:.0f} |")

emit_plot(logs, out / "trajectories.svg")
print("wrote", out / "trajectories.svg")
