"""Closed-loop Monte Carlo study: simulation, metrics and output files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import (FORMAT_VERSION, PHASE_LENGTH, Dataset, EngineState, PlantCoefficients,
                     ResidualCoefficients, equilibrium, plant_step, reference_profile)
from .smpc import (ControllerVariant, ScenarioSet, SmpcConfig, SmpcController, gaussian_residual_fit)

TRAJECTORY_COLUMNS = ("run", "cycle", "ca50", "imep", "dpmax", "nvo", "fuel", "eth", "ca50_ref", "imep_ref",
                      "solver_flag", "solve_ms")
CA50_HIGH = 13.0
CA50_LOW = 2.0


@dataclass
class RunConfig:
    controller: str = "nominal"
    cycles: int = 120
    runs: int = 50
    base_seed: int = 0
    residual: bool = True
    plant: PlantCoefficients = field(default_factory=PlantCoefficients)
    residual_coef: ResidualCoefficients = field(default_factory=ResidualCoefficients)
    smpc: SmpcConfig = field(default_factory=SmpcConfig)
    model_path: str | None = None
    dataset_path: str | None = None
    pce_dir: str | None = None

    def __post_init__(self):
        if self.cycles < 1 or self.runs < 1:
            raise ValueError("cycles and runs must be >= 1")


@dataclass
class TrajectoryLog:
    """One row per (run, cycle): the cycle's outcome, the applied input, references and solver info."""

    data: np.ndarray  # (rows, len(TRAJECTORY_COLUMNS))

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(TRAJECTORY_COLUMNS))

    def __len__(self):
        return self.data.shape[0]

    def col(self, name: str) -> np.ndarray:
        return self.data[:, TRAJECTORY_COLUMNS.index(name)]

    @property
    def runs(self) -> np.ndarray:
        return np.unique(self.col("run")).astype(int)

    def grid(self, name: str) -> np.ndarray:
        """Column as a (runs, cycles) array; rows ordered by run then cycle."""
        order = np.lexsort((self.col("cycle"), self.col("run")))
        n_runs = self.runs.size
        return self.col(name)[order].reshape(n_runs, -1)

    @staticmethod
    def concat(logs) -> "TrajectoryLog":
        return TrajectoryLog(np.vstack([lg.data for lg in logs]))

    def validate(self) -> None:
        for r in self.runs:
            c = np.sort(self.col("cycle")[self.col("run") == r])
            if not np.array_equal(c, np.arange(c.size)):
                raise ValueError(f"run {r}: cycle indices not contiguous")


def run_stream(base_seed: int, run: int) -> np.random.Generator:
    # counter-based generator keyed by run: streams never overlap
    return np.random.Generator(np.random.Philox(key=base_seed + run))


def load_variant(cfg: RunConfig) -> ControllerVariant:
    """Load the uncertainty model the controller tag needs."""
    from .wae import WaeModel

    tag = cfg.controller
    try:
        if tag in ("pc", "gem"):
            if cfg.model_path is None:
                raise ValueError(f"controller {tag!r} requires model_path")
            return ControllerVariant(tag, wae=WaeModel.load(cfg.model_path))
        if tag == "gaussian":
            if cfg.dataset_path is None:
                raise ValueError("controller 'gaussian' requires dataset_path")
            data = Dataset.load(cfg.dataset_path)
            return ControllerVariant(tag, gaussian=gaussian_residual_fit(data.states, data.residuals))
    except (OSError, KeyError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot load model files for {tag!r}: {e}") from e
    return ControllerVariant(tag)


def load_scenarios(cfg: RunConfig) -> ScenarioSet | None:
    from .pce import PceProjection

    if cfg.controller not in ("pc", "gem"):
        return None
    if cfg.pce_dir is None:
        return ScenarioSet.build()
    d = Path(cfg.pce_dir)
    try:
        return ScenarioSet(PceProjection.load(d / "pce_step0.json"), PceProjection.load(d / "pce_stepi.json"))
    except OSError as e:
        raise ValueError(f"cannot load projections from {d}: {e}") from e


def make_controller(cfg: RunConfig, variant: ControllerVariant | None = None,
                    scenarios: ScenarioSet | None = None) -> SmpcController:
    variant = variant or load_variant(cfg)
    if scenarios is None:
        scenarios = load_scenarios(cfg)
    return SmpcController(variant, cfg.smpc, scenarios, cfg.plant)


def run_closed_loop(cfg: RunConfig, run: int, controller: SmpcController | None = None) -> TrajectoryLog:
    """Simulate one run from the first-phase equilibrium.

    Row ``k`` holds the outcome of cycle ``k`` (the state produced by the
    input applied at cycle ``k``) and that cycle's references.
    """
    controller = controller or make_controller(cfg)
    controller.reset()
    rng = run_stream(cfg.base_seed, run)
    x = EngineState.from_array(equilibrium(*reference_profile(0), cfg.plant)[0])
    rows = np.empty((cfg.cycles, len(TRAJECTORY_COLUMNS)))
    for k in range(cfg.cycles):
        rec = controller.step(x, k)
        x = plant_step(x, rec.input, rng if cfg.residual else None, cfg.plant, cfg.residual_coef,
                       residual=cfg.residual)
        ca_ref, im_ref = reference_profile(k)
        rows[k] = (run, k, x.ca50, x.imep, x.dpmax, rec.input.nvo, rec.input.fuel, rec.input.eth,
                   ca_ref, im_ref, float(rec.degraded), rec.solve_ms)
    return TrajectoryLog(rows)


@dataclass
class MetricsReport:
    controller: str
    runs: int
    cycles: int
    variance: float
    ratio_ge13: float
    ratio_le2: float
    rmse_ca50: float
    rmse_imep: float
    rmse_ca50_per_run: float
    rmse_imep_per_run: float
    per_phase: dict
    degraded_fraction: float
    mean_solve_ms: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["format_version"] = FORMAT_VERSION
        return d


def compute_metrics(log: TrajectoryLog, controller: str = "") -> MetricsReport:
    """Table-style metrics.

    Variance and ratios pool every (run, cycle) sample; the main RMSEs use
    the per-cycle mean across runs, the ``*_per_run`` values average the
    RMSE of each run.
    """
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    ca, im = log.grid("ca50"), log.grid("imep")
    ca_ref, im_ref = log.grid("ca50_ref")[0], log.grid("imep_ref")[0]

    def rmse(a, ref):
        return float(np.sqrt(np.mean((a - ref) ** 2)))

    per_phase = {}
    cycles = ca.shape[1]
    for p in range(int(np.ceil(cycles / PHASE_LENGTH))):
        sl = slice(p * PHASE_LENGTH, min((p + 1) * PHASE_LENGTH, cycles))
        per_phase[str(p + 1)] = {
            "variance": float(np.var(ca[:, sl])),
            "ratio_ge13": float(np.mean(ca[:, sl] >= CA50_HIGH)),
            "ratio_le2": float(np.mean(ca[:, sl] <= CA50_LOW)),
            "rmse_ca50": rmse(ca[:, sl].mean(0), ca_ref[sl]),
            "rmse_imep": rmse(im[:, sl].mean(0), im_ref[sl]),
        }
    return MetricsReport(
        controller=controller, runs=ca.shape[0], cycles=cycles,
        variance=float(np.var(ca)),
        ratio_ge13=float(np.mean(ca >= CA50_HIGH)),
        ratio_le2=float(np.mean(ca <= CA50_LOW)),
        rmse_ca50=rmse(ca.mean(0), ca_ref),
        rmse_imep=rmse(im.mean(0), im_ref),
        rmse_ca50_per_run=float(np.mean([rmse(r, ca_ref) for r in ca])),
        rmse_imep_per_run=float(np.mean([rmse(r, im_ref) for r in im])),
        per_phase=per_phase,
        degraded_fraction=float(np.mean(log.col("solver_flag"))),
        mean_solve_ms=float(np.mean(log.col("solve_ms"))),
    )


_WORKER_CONTROLLER: SmpcController | None = None


def _worker_init(cfg: RunConfig):
    global _WORKER_CONTROLLER
    _WORKER_CONTROLLER = make_controller(cfg)


def _worker_run(cfg: RunConfig, run: int) -> TrajectoryLog:
    return run_closed_loop(cfg, run, _WORKER_CONTROLLER)


def monte_carlo(cfg: RunConfig, controller: SmpcController | None = None, progress=None, workers: int = 1):
    """Run ``cfg.runs`` independent runs; returns ``(log, report)``.

    With ``workers > 1`` the runs go to a process pool, each worker building
    its own controller from ``cfg``. Every run owns its random stream and the
    controller is reset per run, so the log does not depend on ``workers``.
    Any failing run aborts the study: partial logs are discarded.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or cfg.runs == 1:
        controller = controller or make_controller(cfg)
        logs = []
        for run in range(cfg.runs):
            logs.append(run_closed_loop(cfg, run, controller))
            if progress is not None:
                progress(run)
    else:
        from concurrent.futures import ProcessPoolExecutor, as_completed

        logs = [None] * cfg.runs
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(cfg,)) as pool:
            futs = {pool.submit(_worker_run, cfg, r): r for r in range(cfg.runs)}
            for fut in as_completed(futs):
                logs[futs[fut]] = fut.result()
                if progress is not None:
                    progress(futs[fut])
    log = TrajectoryLog.concat(logs)
    return log, compute_metrics(log, cfg.controller)


def write_outputs(log: TrajectoryLog, report: MetricsReport | None, trajectory_path=None, metrics_path=None):
    """Write the trajectory CSV (9 significant digits) and the metrics JSON document."""
    if trajectory_path is not None:
        p = Path(trajectory_path)
        try:
            with open(p, "w", newline="") as fh:
                fh.write(f"# format_version={FORMAT_VERSION}\n")
                wr = csv.writer(fh)
                wr.writerow(TRAJECTORY_COLUMNS)
                for row in log.data:
                    wr.writerow([f"{int(v)}" if j < 2 else f"{v:.9g}" for j, v in enumerate(row)])
        except OSError as e:
            raise OSError(f"{p}: {e.strerror or e}") from e
    if metrics_path is not None and report is not None:
        p = Path(metrics_path)
        try:
            p.write_text(json.dumps(report.to_dict(), indent=2))
        except OSError as e:
            raise OSError(f"{p}: {e.strerror or e}") from e


def read_trajectory(path) -> TrajectoryLog:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# format_version="):
            raise ValueError(f"{path}: missing format_version line")
        if int(first.split("=", 1)[1]) != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported trajectory format")
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return TrajectoryLog(np.array([[float(v) for v in row] for row in rd]))


def emit_plot(logs: dict, path) -> None:
    """Mean +- one standard deviation of CA50 and IMEP per controller, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for tag, log in logs.items():
        for ax, name in zip(axes, ("ca50", "imep")):
            g = log.grid(name)
            t = np.arange(g.shape[1])
            m, s = g.mean(0), g.std(0)
            (line,) = ax.plot(t, m, label=tag)
            ax.fill_between(t, m - s, m + s, color=line.get_color(), alpha=0.2)
    first = next(iter(logs.values()))
    axes[0].plot(first.grid("ca50_ref")[0], "k--", lw=1, label="reference")
    axes[1].plot(first.grid("imep_ref")[0], "k--", lw=1)
    axes[0].axhline(CA50_HIGH, color="r", lw=0.8)
    axes[0].set_ylabel("CA50 [deg CA]")
    axes[1].set_ylabel("IMEP [bar]")
    axes[1].set_xlabel("cycle")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg")
    finally:
        plt.close(fig)


def with_controller(cfg: RunConfig, tag: str) -> RunConfig:
    return replace(cfg, controller=tag)
