"""Command-line interface.

Every subcommand reads an optional flat ``section.key = value`` file
(``--config``) and applies ``--set section.key=value`` overrides and the
dedicated flags on top. Errors print one ``error: code=... key=... message=...``
line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

# key -> (default, type, help); default None marks a key that must be given
KEYS = {
    "data.path": (None, str, "dataset CSV (output of gen-data, input of train/eval-model/gaussian)"),
    "data.n": (50000, int, "records to simulate"),
    "data.seed": (1, int, "excitation and residual stream key"),
    "model.path": (None, str, "generative model JSON file"),
    "train.n_train": (40000, int, "leading records used for training; the rest is held out"),
    "train.epochs": (15, int, "training epochs"),
    "train.batch_size": (320, int, "mini-batch size"),
    "train.lam": (2.5, float, "weight of the latent MMD penalty"),
    "train.sigma": (0.5, float, "latent MMD kernel bandwidth"),
    "train.lr": (1e-3, float, "Adam step size"),
    "train.lr_decay": (0.8, float, "per-epoch step-size factor"),
    "train.seed": (0, int, "initialization and shuffling seed"),
    "eval.n_perm": (200, int, "permutations for the null quantiles"),
    "eval.seed": (0, int, "evaluation seed"),
    "eval.out": ("", str, "optional JSON report path"),
    "pce.dir": ("", str, "directory with pce_step0.json and pce_stepi.json (empty: build in memory)"),
    "sim.controller": ("nominal", str, "nominal | gaussian | pc | gem"),
    "sim.runs": (50, int, "Monte Carlo runs"),
    "sim.cycles": (120, int, "engine cycles per run"),
    "sim.base_seed": (0, int, "run r uses stream key base_seed + r"),
    "sim.workers": (1, int, "worker processes; results do not depend on this"),
    "sim.residual": (True, bool, "apply the ground-truth residual in the plant"),
    "sim.out_dir": ("results", str, "output directory for trajectories and metrics"),
    "sim.plot": (False, bool, "also write an SVG of the mean +- std trajectories"),
    "smpc.horizon": (4, int, "prediction horizon N"),
    "smpc.eps_state": (0.95, float, "state chance-constraint level (Cantelli kappa = sqrt((1-eps)/eps))"),
    "smpc.eps_input": (0.95, float, "input chance-constraint level"),
    "smpc.mmd_sigma": (2.5, float, "MMD objective kernel bandwidth (normalized units)"),
    "smpc.penalty_weight": (100.0, float, "initial constraint penalty weight"),
    "smpc.penalty_growth": (10.0, float, "penalty weight factor per outer iteration"),
    "smpc.outer_iters": (3, int, "penalty outer iterations"),
    "smpc.inner_iters": (60, int, "quasi-Newton iterations per outer iteration"),
    "smpc.fd_step": (1e-5, float, "central finite-difference step"),
    "smpc.gtol": (1e-4, float, "projected-gradient tolerance"),
    "smpc.xtol": (1e-7, float, "step-norm tolerance"),
    "smpc.ftol": (4e-5, float, "stop when an iteration lowers the objective by less than this"),
    "smpc.stall_window": (3, int, "iterations over which the ftol decrease is measured"),
    "smpc.violation_tol": (1e-4, float, "constraint violation accepted without another outer iteration"),
    "smpc.jitter": (1e-9, float, "Cholesky jitter"),
    "report.dir": ("results", str, "directory holding traj_<controller>.csv files"),
    "report.plot": (True, bool, "write report.svg next to the table"),
}

REQUIRED = {
    "gen-data": ("data.path",),
    "train": ("data.path", "model.path"),
    "eval-model": ("data.path", "model.path"),
    "precompute-pce": (),
    "simulate": (),
    "report": (),
}


class CliError(Exception):
    def __init__(self, code: str, message: str, key: str | None = None, status: int = 1):
        super().__init__(message)
        self.code, self.key, self.status = code, key, status


def _parse_value(key: str, raw: str):
    _, typ, _ = KEYS[key]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise CliError("bad_value", f"cannot parse {raw!r} as {typ.__name__}", key, 2) from None


def read_config_file(path) -> dict:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError("config_unreadable", f"{path}: {e.strerror or e}", None, 2) from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config_syntax", f"{path}:{n}: expected 'section.key = value'", None, 2)
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in KEYS:
            raise CliError("unknown_key", f"{path}:{n}: unknown key", k, 2)
        out[k] = _parse_value(k, v)
    return out


def resolve(args, command: str) -> dict:
    cfg = {k: v[0] for k, v in KEYS.items()}
    if args.config:
        cfg.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise CliError("bad_override", f"expected key=value, got {item!r}", None, 2)
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in KEYS:
            raise CliError("unknown_key", "unknown key", k, 2)
        cfg[k] = _parse_value(k, v)
    for flag, key in (("controller", "sim.controller"), ("runs", "sim.runs"), ("cycles", "sim.cycles"),
                      ("seed", "sim.base_seed"), ("out_dir", "sim.out_dir"), ("model", "model.path"),
                      ("data", "data.path")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[key] = _parse_value(key, str(val))
    if getattr(args, "plot", False):
        cfg["sim.plot"] = True
    need = list(REQUIRED[command])
    if command == "simulate":
        if cfg["sim.controller"] in ("pc", "gem"):
            need.append("model.path")
        if cfg["sim.controller"] == "gaussian":
            need.append("data.path")
    for k in need:
        if cfg[k] is None:
            raise CliError("missing_key", f"required for {command}", k, 2)
    return cfg


def smpc_config(cfg: dict):
    from .smpc import SmpcConfig

    names = ("horizon", "eps_state", "eps_input", "mmd_sigma", "penalty_weight", "penalty_growth", "outer_iters",
             "inner_iters", "fd_step", "gtol", "xtol", "ftol", "stall_window",
             "violation_tol", "jitter")
    try:
        return SmpcConfig(**{n: cfg["smpc." + n] for n in names})
    except ValueError as e:
        raise CliError("invalid_config", str(e), None, 2) from None


def cmd_gen_data(cfg):
    from .engine import generate_dataset

    data = generate_dataset(cfg["data.n"], cfg["data.seed"])
    Path(cfg["data.path"]).parent.mkdir(parents=True, exist_ok=True)
    data.save(cfg["data.path"])
    print(f"wrote {len(data)} records to {cfg['data.path']}")


def _train_config(cfg):
    from .wae import TrainConfig

    return TrainConfig(batch_size=cfg["train.batch_size"], epochs=cfg["train.epochs"], lam=cfg["train.lam"],
                       lr=cfg["train.lr"], lr_decay=cfg["train.lr_decay"], seed=cfg["train.seed"])


def cmd_train(cfg):
    from .engine import Dataset
    from .mmd import KernelSpec
    from .wae import wae_train

    data = Dataset.load(cfg["data.path"])
    train, _ = data.split(cfg["train.n_train"])
    t0 = time.perf_counter()
    model = wae_train(train, _train_config(cfg), KernelSpec(cfg["train.sigma"]))
    Path(cfg["model.path"]).parent.mkdir(parents=True, exist_ok=True)
    model.save(cfg["model.path"])
    print(f"trained on {len(train)} records in {time.perf_counter() - t0:.1f} s; "
          f"final loss {model.loss_trace[-1]:.6g}; wrote {cfg['model.path']}")


def cmd_eval_model(cfg):
    from .engine import Dataset
    from .mmd import KernelSpec
    from .wae import WaeModel, evaluate_fit

    data = Dataset.load(cfg["data.path"])
    _, test = data.split(cfg["train.n_train"])
    model = WaeModel.load(cfg["model.path"])
    rep = evaluate_fit(model, test, KernelSpec(cfg["train.sigma"]), seed=cfg["eval.seed"],
                       n_perm=cfg["eval.n_perm"])
    text = json.dumps(rep, indent=2)
    if cfg["eval.out"]:
        Path(cfg["eval.out"]).write_text(text)
    print(text)


def cmd_precompute_pce(cfg):
    from .smpc import ScenarioSet

    d = Path(cfg["pce.dir"] or "pce")
    d.mkdir(parents=True, exist_ok=True)
    scen = ScenarioSet.build()
    scen.proj0.save(d / "pce_step0.json")
    scen.proj.save(d / "pce_stepi.json")
    print(f"wrote projections ({scen.proj0.A.shape[0]} and {scen.proj.A.shape[0]} terms) to {d}")


def cmd_simulate(cfg):
    from .harness import RunConfig, emit_plot, monte_carlo, write_outputs

    try:
        rc = RunConfig(controller=cfg["sim.controller"], cycles=cfg["sim.cycles"], runs=cfg["sim.runs"],
                       base_seed=cfg["sim.base_seed"], residual=cfg["sim.residual"], smpc=smpc_config(cfg),
                       model_path=cfg["model.path"], dataset_path=cfg["data.path"], pce_dir=cfg["pce.dir"] or None)
    except ValueError as e:
        raise CliError("invalid_config", str(e), None, 2) from None
    if rc.controller not in ("nominal", "gaussian", "pc", "gem"):
        raise CliError("invalid_config", f"unknown controller {rc.controller!r}", "sim.controller", 2)
    out = Path(cfg["sim.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    log, rep = monte_carlo(rc, workers=cfg["sim.workers"], progress=lambda r: print(f"run {r + 1}/{rc.runs} done", file=sys.stderr))
    write_outputs(log, rep, out / f"traj_{rc.controller}.csv", out / f"metrics_{rc.controller}.json")
    if cfg["sim.plot"]:
        emit_plot({rc.controller: log}, out / f"traj_{rc.controller}.svg")
    print(f"{rc.controller}: variance {rep.variance:.4f} ratio>=13 {rep.ratio_ge13:.4%} "
          f"rmse_ca50 {rep.rmse_ca50:.4f} rmse_imep {rep.rmse_imep:.4f} ({time.perf_counter() - t0:.0f} s)")


def cmd_report(cfg):
    from .harness import compute_metrics, emit_plot, read_trajectory

    d = Path(cfg["report.dir"])
    logs = {}
    for tag in ("nominal", "gaussian", "pc", "gem"):
        p = d / f"traj_{tag}.csv"
        if p.exists():
            logs[tag] = read_trajectory(p)
    if not logs:
        raise CliError("no_inputs", f"no traj_<controller>.csv files in {d}", "report.dir")
    lines = ["| controller | variance | ratio(>=13) | ratio(<=2) | RMSE-CA50 | RMSE-IMEP |",
             "|---|---|---|---|---|---|"]
    for tag, log in logs.items():
        r = compute_metrics(log, tag)
        lines.append(f"| {tag} | {r.variance:.3f} | {r.ratio_ge13:.3%} | {r.ratio_le2:.3%} | "
                     f"{r.rmse_ca50:.4f} | {r.rmse_imep:.4f} |")
    table = "\n".join(lines)
    (d / "report.md").write_text(table + "\n")
    if cfg["report.plot"]:
        emit_plot(logs, d / "report.svg")
    print(table)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval-model": cmd_eval_model,
            "precompute-pce": cmd_precompute_pce, "simulate": cmd_simulate, "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message.replace("\n", " "), None, 2)


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<22} {h} (default: {'required' if d is None else d})" for k, (d, _, h) in KEYS.items())
    epilog = "configuration keys (file lines 'section.key = value' or --set section.key=value):\n" + keys
    p = _Parser(prog="gemsmpc", description="Generative-model SMPC study on a surrogate HCCI engine.",
                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="flat key-value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        if name in ("train", "eval-model", "simulate"):
            sp.add_argument("--model", help="alias for model.path")
        if name in ("gen-data", "train", "eval-model", "simulate"):
            sp.add_argument("--data", help="alias for data.path")
        if name == "simulate":
            sp.add_argument("--controller", help="alias for sim.controller")
            sp.add_argument("--runs", help="alias for sim.runs")
            sp.add_argument("--cycles", help="alias for sim.cycles")
            sp.add_argument("--seed", help="alias for sim.base_seed")
            sp.add_argument("--out-dir", dest="out_dir", help="alias for sim.out_dir")
            sp.add_argument("--plot", action="store_true", help="alias for sim.plot = true")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args, args.command)
        COMMANDS[args.command](cfg)
        return 0
    except CliError as e:
        key = f" key={e.key}" if e.key else ""
        print(f"error: code={e.code}{key} message={e}", file=sys.stderr)
        return e.status
    except (OSError, ValueError, FloatingPointError, ArithmeticError) as e:
        msg = str(e).replace("\n", " ")
        print(f"error: code={type(e).__name__} message={msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
