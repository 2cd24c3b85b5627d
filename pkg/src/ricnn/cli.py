"""Command-line front door: ``ricnn run | sweep | gen-data | recompute-metrics``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import RunConfig, set_dotted
from .errors import ConfigError, RicError
from .panel import SyntheticSpec, generate_panel, save_panel
from .pipeline import load_grid, recompute_from_files, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# flag -> dotted config key
RUN_OVERRIDES = {
    "model": "model",
    "v_init": "policy.v_init",
    "v_stop": "policy.v_stop",
    "epochs": "policy.epochs",
    "max_epochs": "policy.max_epochs",
    "window": "policy.window",
    "batch_size": "policy.batch_size",
    "learning_rate": "policy.learning_rate",
    "lam": "linear.lam",
    "quantile": "portfolio.quantile",
    "cost_per_side": "portfolio.cost_per_side",
    "t_start": "evaluation.t_start",
    "t_end": "evaluation.t_end",
    "seed_init": "seeds.init",
    "seed_dropout": "seeds.dropout",
    "seed_shuffle": "seeds.shuffle",
    "seed_data": "seeds.data",
    "transfer_source": "transfer_source",
    "output_dir": "output_dir",
    "panel_file": "panel.file",
}


def _add_run_flags(p):
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--model", choices=["ric_nn", "epoch_nn", "lasso", "ridge"])
    p.add_argument("--v-init", type=float)
    p.add_argument("--v-stop", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lam", type=float, help="LASSO/ridge regularizer")
    p.add_argument("--quantile", type=float)
    p.add_argument("--cost-per-side", type=float)
    p.add_argument("--t-start", type=int)
    p.add_argument("--t-end", type=int)
    p.add_argument("--seed-init", type=int)
    p.add_argument("--seed-dropout", type=int)
    p.add_argument("--seed-shuffle", type=int)
    p.add_argument("--seed-data", type=int)
    p.add_argument("--transfer-source", help="snapshot .npz whose first 4 layers seed the first step")
    p.add_argument("--output-dir")
    p.add_argument("--panel-file", help="use this CSV panel instead of the configured source")
    p.add_argument("--auto-epoch-from-first-step", action="store_true",
                   help="epoch_nn: use the epoch count at which step one first reaches v_stop")
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--print-effective-config", action="store_true",
                   help="print the fully resolved config and exit")


def build_parser():
    parser = argparse.ArgumentParser(prog="ricnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="run one backtest"))

    p = sub.add_parser("sweep", help="run a grid of configs and tabulate the metrics")
    p.add_argument("--grid", required=True, help="YAML with 'base' (run config) and 'grid' (dotted key -> list)")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gen-data", help="write a synthetic panel CSV")
    p.add_argument("--n-stocks", type=int, default=100)
    p.add_argument("--n-steps", type=int, default=170)
    p.add_argument("--signal-kind", choices=["linear", "nonlinear", "none"], default="nonlinear")
    p.add_argument("--noise-scale", type=float, default=0.02)
    p.add_argument("--turnover-rate", type=float, default=0.01)
    p.add_argument("--persistence", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recompute-metrics", help="recompute report metrics from series.csv")
    p.add_argument("run_dir")
    p.add_argument("--tol", type=float, default=1e-12)
    return parser


def _resolve_run_config(args):
    try:
        with Path(args.config).open() as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    for flag, key in RUN_OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            if flag == "panel_file":
                data["panel"] = {"file": value, "schema": (data.get("panel") or {}).get("schema", {})}
                continue
            set_dotted(data, key, value)
    if args.auto_epoch_from_first_step:
        set_dotted(data, "policy.auto_epoch_from_first_step", True)
    if args.no_warm_start:
        set_dotted(data, "policy.warm_start", False)
    return RunConfig.from_dict(data)


def cmd_run(args):
    config = _resolve_run_config(args)
    if args.print_effective_config:
        sys.stdout.write(config.to_yaml())
        return EXIT_OK
    result = run(config)
    rep = result.report
    lg, ls = rep["metrics"]["long"], rep["metrics"]["long_short"]
    print(f"{rep['model']}: t={rep['evaluation']['t_start']}..{rep['evaluation']['t_end']} "
          f"mean rank IC {rep['mean_rank_ic']:.4f}")
    print(f"  long        Alpha {lg['annualized_return']:.4%}  TE {lg['risk']:.4%}  "
          f"IR {lg['risk_adjusted']:.3f}  MaxDD {lg['max_drawdown']:.2%}")
    print(f"  long-short  AR {ls['annualized_return']:.4%}  RISK {ls['risk']:.4%}  "
          f"R/R {ls['risk_adjusted']:.3f}  MaxDD {ls['max_drawdown']:.2%}")
    print(f"  outputs in {config.output_dir}")
    return EXIT_OK


def cmd_sweep(args):
    spec = load_grid(args.grid)
    points, rows, std = sweep(spec, args.output_dir, jobs=args.jobs)
    for p, r in zip(points, rows):
        rr = r.get("rr")
        print(f"{p}  {r['status']}" + (f"  R/R {rr:.3f}" if rr is not None else ""))
    print(f"std of R/R across points: {std['rr']:.4f}")
    print(f"comparison table: {Path(args.output_dir) / 'comparison.csv'}")
    return EXIT_OK


def cmd_gen_data(args):
    spec = SyntheticSpec(args.n_stocks, args.n_steps, args.signal_kind, args.noise_scale,
                         args.turnover_rate, args.seed, args.persistence)
    try:
        panel = generate_panel(spec)
    except RicError as exc:
        raise ConfigError(str(exc)) from None
    save_panel(panel, args.out)
    print(f"wrote {panel.T} steps to {args.out}")
    return EXIT_OK


def cmd_recompute(args):
    _, again, worst = recompute_from_files(args.run_dir)
    print(json.dumps(again, indent=2, sort_keys=True))
    print(f"max abs difference vs report: {worst:.3e}")
    return EXIT_OK if worst <= args.tol else EXIT_RUNTIME


def _origin(exc):
    """Package module that raised `exc`, for errors whose class is shared across modules."""
    if exc.module != "ricnn":
        return exc.module
    tb, name = exc.__traceback__, exc.module
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("ricnn."):
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-data": cmd_gen_data, "recompute-metrics": cmd_recompute}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "module": exc.module, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except RicError as exc:
        print(json.dumps({"error": type(exc).__name__, "module": _origin(exc), "step": exc.step,
                          "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(json.dumps({"error": "config", "module": "cli", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
