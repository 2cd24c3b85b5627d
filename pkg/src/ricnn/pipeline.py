"""End-to-end orchestration: panel -> features -> model -> portfolios -> metrics -> files."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .baselines import linear_backtest
from .config import RunConfig, set_dotted
from .errors import ConfigError, RicError, UndefinedCorrelationError
from .features import FIRST_SAMPLE_T
from .metrics import metrics_report, rank_ic
from .net import load_snapshot, save_snapshot
from .panel import PanelSchema, generate_panel, impute_missing, load_panel
from .portfolio import PortfolioSeries, form_portfolio, realize_returns
from .trainer import auto_epochs, rolling_backtest

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def build_panel(config):
    src = config.panel
    if src.synthetic is not None:
        panel = generate_panel(src.synthetic_spec(config.seeds.data))
    else:
        panel = load_panel(src.file, PanelSchema.from_dict(src.schema))
    return impute_missing(panel)


def evaluation_window(config, panel):
    lo = FIRST_SAMPLE_T + config.policy.window + 1
    t_start = config.evaluation.t_start if config.evaluation.t_start is not None else lo
    t_end = config.evaluation.t_end if config.evaluation.t_end is not None else panel.T - 1
    return t_start, t_end


def out_of_sample_rank_ic(panel, step_scores):
    """Rank IC of scores at t against realized returns at t+1, per step.

    Stocks that leave the universe before t+1 are excluded; a constant score vector
    counts as IC 0.
    """
    out = []
    for s in step_scores:
        nxt = panel.step(s.t + 1)
        rows = nxt.row_of()
        keep = [k for k, sid in enumerate(s.stock_ids) if sid in rows]
        realized = nxt.returns[[rows[s.stock_ids[k]] for k in keep]]
        try:
            out.append(rank_ic(realized, np.asarray(s.scores)[keep]))
        except UndefinedCorrelationError:
            out.append(0.0)
    return np.array(out)


def series_metrics(series):
    """The paper-style metric table of one portfolio series, gross and net of cost."""
    return {
        "long": metrics_report(series.alpha, series.R_L).to_dict(),
        "long_short": metrics_report(series.R_LS).to_dict(),
        "long_net": metrics_report(series.alpha_net, series.R_L_net).to_dict(),
        "long_short_net": metrics_report(series.R_LS_net).to_dict(),
    }


@dataclass
class RunResult:
    config: RunConfig
    step_scores: list
    rank_ics: np.ndarray
    series: PortfolioSeries
    report: dict
    epochs_used: int | None = None
    timings: dict = field(default_factory=dict)


def execute(config, panel=None):
    """Run the whole pipeline in memory. `panel` overrides the configured source."""
    t0 = time.perf_counter()
    if panel is None:
        panel = build_panel(config)
    t_start, t_end = evaluation_window(config, panel)
    seeds = config.seed_streams()
    policy = config.train_policy()
    epochs_used = None

    if config.model in ("ric_nn", "epoch_nn"):
        transfer = load_snapshot(config.transfer_source) if config.transfer_source else None
        if config.model == "epoch_nn" and config.policy.auto_epoch_from_first_step:
            epochs_used = auto_epochs(panel, policy, t_start, config.network_config(), seeds)
            policy = replace(policy, epochs=epochs_used)
        elif config.model == "epoch_nn":
            epochs_used = policy.epochs
        step_scores = rolling_backtest(
            panel, policy, t_start, t_end, config.network_config(), seeds,
            warm_start=config.policy.warm_start, transfer_source=transfer,
        )
    else:
        step_scores = linear_backtest(panel, config.model, config.linear.lam, t_start, t_end,
                                      window=config.policy.window)

    spec = config.portfolio_spec()
    portfolios = [form_portfolio(s.stock_ids, s.scores, spec, t=s.t) for s in step_scores]
    series = realize_returns(portfolios, panel, spec)
    ics = out_of_sample_rank_ic(panel, step_scores)

    report = {
        "version": REPORT_VERSION,
        "model": config.model,
        "config_digest": config.digest(),
        "seeds": config.to_dict()["seeds"],
        "evaluation": {"t_start": t_start, "t_end": t_end, "n_steps": len(step_scores)},
        "mean_rank_ic": float(np.mean(ics)),
        "metrics": series_metrics(series),
        "rank_ic": [float(v) for v in ics],
        "n_delisted_positions": int(series.n_delisted.sum()),
    }
    if step_scores and step_scores[0].outcome is not None:
        report["training"] = {
            "epochs": [s.outcome.epochs_run for s in step_scores],
            "terminated": [s.outcome.terminated.value for s in step_scores],
            "train_rank_ic": [s.outcome.final_model.train_rank_ic for s in step_scores],
        }
        if epochs_used is not None:
            report["training"]["fixed_epochs"] = epochs_used
    return RunResult(config, step_scores, ics, series, report, epochs_used,
                     {"wall_seconds": time.perf_counter() - t0})


def write_outputs(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    (out / "effective_config.yaml").write_text(result.config.to_yaml())
    result.series.to_csv(out / "series.csv")

    with (out / "rank_ic.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "rank_ic"])
        for s, ic in zip(result.step_scores, result.rank_ics):
            w.writerow([s.t, repr(float(ic))])

    with (out / "scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "stock", "score"])
        for s in result.step_scores:
            for sid, sc in zip(s.stock_ids, s.scores):
                w.writerow([s.t, sid, repr(float(sc))])

    if result.step_scores and result.step_scores[0].outcome is not None:
        with (out / "trace.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "epoch", "loss", "window_rank_ic", "terminated"])
            for s in result.step_scores:
                o = s.outcome
                for rec in o.trace:
                    w.writerow([s.t, rec.epoch, repr(rec.loss), repr(rec.rank_ic), o.terminated.value])
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        last = result.step_scores[-1]
        save_snapshot(last.outcome.final_model, snap_dir / f"final_t{last.t}.npz")
        if last.outcome.init_seed_model is not None:
            save_snapshot(last.outcome.init_seed_model, snap_dir / f"init_seed_t{last.t}.npz")

    meta = {"config_digest": result.config.digest(), **result.timings}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def run(config, panel=None):
    result = execute(config, panel)
    write_outputs(result, config.output_dir)
    return result


def recompute_from_files(run_dir):
    """Recompute every metric from ``series.csv``; returns (report metrics, recomputed, max abs diff)."""
    run_dir = Path(run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    series = PortfolioSeries.from_csv(run_dir / "series.csv")
    again = series_metrics(series)
    worst = 0.0
    for leg, vals in again.items():
        for k, v in vals.items():
            ref = report["metrics"][leg][k]
            if math.isnan(v) and math.isnan(ref):
                continue
            worst = max(worst, abs(v - ref))
    return report["metrics"], again, worst


# -- sweeps --------------------------------------------------------------------

COMPARISON_COLUMNS = (
    "mean_rank_ic", "alpha", "te", "ir", "long_max_dd", "ar", "risk", "rr", "long_short_max_dd",
)


def _row_from_report(report):
    lg, ls = report["metrics"]["long"], report["metrics"]["long_short"]
    return {
        "mean_rank_ic": report["mean_rank_ic"],
        "alpha": lg["annualized_return"],
        "te": lg["risk"],
        "ir": lg["risk_adjusted"],
        "long_max_dd": lg["max_drawdown"],
        "ar": ls["annualized_return"],
        "risk": ls["risk"],
        "rr": ls["risk_adjusted"],
        "long_short_max_dd": ls["max_drawdown"],
    }


def expand_grid(grid):
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid entry {k!r} must be a nonempty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_point(args):
    base, point, out_dir = args
    d = json.loads(json.dumps(base))
    for k, v in point.items():
        set_dotted(d, k, v)
    d["output_dir"] = str(out_dir)
    try:
        result = run(RunConfig.from_dict(d))
        return {"status": "ok", **_row_from_report(result.report)}
    except RicError as exc:
        return {"status": f"error[{exc.module}]: {exc}"}


def sweep(grid_spec, out_dir, jobs=1):
    """One run per grid point plus a comparison table with a std-dev row across points."""
    base = grid_spec.get("base")
    if not isinstance(base, dict):
        raise ConfigError("sweep spec needs a 'base' run config")
    RunConfig.from_dict(base)
    points = expand_grid(grid_spec.get("grid"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(base, p, out / f"point_{k:03d}") for k, p in enumerate(points)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]

    keys = list(points[0])
    ok = [r for r in rows if r["status"] == "ok"]
    std = {}
    for c in COMPARISON_COLUMNS:
        vals = [r[c] for r in ok]
        std[c] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else math.nan

    path = out / "comparison.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", *keys, "status", *COMPARISON_COLUMNS])
        for k, (p, r) in enumerate(zip(points, rows)):
            w.writerow([k, *(p[key] for key in keys), r["status"],
                        *(repr(float(r[c])) if c in r else "" for c in COMPARISON_COLUMNS)])
        w.writerow(["std", *([""] * len(keys)), f"{len(ok)} ok",
                    *(repr(std[c]) for c in COMPARISON_COLUMNS)])
    return points, rows, std


def load_grid(path):
    try:
        with Path(path).open() as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read sweep spec {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("sweep spec must be a mapping with 'base' and 'grid'")
    return data
