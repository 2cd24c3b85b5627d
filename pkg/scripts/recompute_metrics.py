#!/usr/bin/env python3
"""Recompute a run's report metrics from its series.csv using only the standard library.

Independent of the ricnn package on purpose: it shares no code with the engine, so
agreement is evidence that the reported numbers follow from the emitted series.

    python3 scripts/recompute_metrics.py out/run1 [--tol 1e-12]
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path


def annualized(values):
    log_growth = math.fsum(math.log1p(v) for v in values)
    return math.expm1(12.0 / len(values) * log_growth)


def annualized_std(values):
    n = len(values)
    mean = math.fsum(values) / n
    return math.sqrt(12.0 * math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def max_drawdown(values):
    wealth = peak = 1.0
    worst = 0.0
    for v in values:
        wealth *= 1.0 + v
        peak = max(peak, wealth)
        worst = min(worst, wealth / peak - 1.0)
    return worst


def table(series, drawdown_series):
    ret, risk = annualized(series), annualized_std(series)
    return {
        "annualized_return": ret,
        "risk": risk,
        "risk_adjusted": ret / risk if risk > 0 else math.nan,
        "max_drawdown": max_drawdown(drawdown_series),
    }


def recompute(run_dir):
    with open(Path(run_dir) / "series.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = {k: [float(r[k]) for r in rows] for k in rows[0]}
    return {
        "long": table(col["alpha"], col["R_L"]),
        "long_short": table(col["R_LS"], col["R_LS"]),
        "long_net": table(col["alpha_net"], col["R_L_net"]),
        "long_short_net": table(col["R_LS_net"], col["R_LS_net"]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir")
    ap.add_argument("--tol", type=float, default=1e-12, help="max abs difference allowed")
    args = ap.parse_args(argv)

    report = json.loads((Path(args.run_dir) / "report.json").read_text())["metrics"]
    again = recompute(args.run_dir)
    worst = 0.0
    for leg, vals in again.items():
        for key, v in vals.items():
            ref = report[leg][key]
            if math.isnan(v) and (ref is None or math.isnan(ref)):
                continue
            diff = abs(v - ref)
            worst = max(worst, diff)
            print(f"{leg:15s} {key:18s} report {ref: .15g}  recomputed {v: .15g}  diff {diff:.2e}")
    ok = worst <= args.tol
    print(f"max abs difference {worst:.3e}: {'OK' if ok else 'MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
