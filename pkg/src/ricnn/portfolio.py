"""Quintile portfolios from per-step scores, and their realized next-step returns."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateUniverseError, ParameterError


@dataclass(frozen=True)
class PortfolioSpec:
    style: str = "long_short"
    quantile: float = 0.2
    cost_per_side: float = 0.0

    def __post_init__(self):
        if self.style not in ("long", "long_short"):
            raise ParameterError(f"unknown portfolio style {self.style!r}")
        if not 0.0 < self.quantile <= 0.5:
            raise ParameterError("quantile must lie in (0, 0.5]")
        if self.cost_per_side < 0:
            raise ParameterError("cost_per_side must be nonnegative")

    def leg_size(self, n):
        # tolerance guards q*n landing a hair under an integer, e.g. 0.2 * 15
        return int(math.floor(self.quantile * n + 1e-9))

    @property
    def round_trip_cost(self):
        """Cost per leg per step under a full monthly rebalance: sell and buy everything."""
        return 2.0 * self.cost_per_side


@dataclass(frozen=True)
class StepPortfolio:
    formed_at: int
    long_set: tuple
    short_set: tuple = ()


def form_portfolio(stock_ids, scores, spec, t=None):
    """Top and bottom ``floor(q * n)`` stocks by score; ties go to the smaller stock id."""
    scores = np.asarray(scores, dtype=float)
    ids = [str(s) for s in stock_ids]
    n = len(ids)
    if n != scores.shape[0]:
        raise ParameterError(f"{n} ids but {scores.shape[0]} scores")
    k = spec.leg_size(n)
    if n < math.ceil(1.0 / spec.quantile - 1e-9) or k < 1:
        raise DegenerateUniverseError(f"{n} scored stocks is too few for quantile {spec.quantile}", step=t)
    top = sorted(range(n), key=lambda i: (-scores[i], ids[i]))[:k]
    long_set = tuple(ids[i] for i in top)
    short_set = ()
    if spec.style == "long_short":
        bottom = sorted(range(n), key=lambda i: (scores[i], ids[i]))[:k]
        short_set = tuple(ids[i] for i in bottom)
    return StepPortfolio(t, long_set, short_set)


SERIES_COLUMNS = (
    "t", "R_L", "R_S", "R_LS", "benchmark", "alpha", "R_L_net", "R_LS_net", "alpha_net", "n_delisted",
)


@dataclass
class PortfolioSeries:
    """Per-step realized returns; row k is the portfolio formed at ``t[k]`` held to ``t[k] + 1``."""

    t: np.ndarray
    R_L: np.ndarray
    R_S: np.ndarray
    R_LS: np.ndarray
    benchmark: np.ndarray
    alpha: np.ndarray
    R_L_net: np.ndarray
    R_LS_net: np.ndarray
    alpha_net: np.ndarray
    n_delisted: np.ndarray
    delisted: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_COLUMNS)
            for k in range(len(self)):
                row = [int(self.t[k])]
                for col in SERIES_COLUMNS[1:-1]:
                    row.append(repr(float(getattr(self, col)[k])))
                row.append(int(self.n_delisted[k]))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = {c: np.array([float(r[c]) for r in rows]) for c in SERIES_COLUMNS}
        cols["t"] = cols["t"].astype(int)
        cols["n_delisted"] = cols["n_delisted"].astype(int)
        return cls(**cols)


def _leg_return(members, returns_next, t, delisted):
    vals = []
    for sid in members:
        r = returns_next.get(sid)
        if r is None:
            # left the universe during the holding month: closed at its last price
            delisted.append((t, sid))
            r = 0.0
        vals.append(r)
    return float(np.mean(vals))


def realize_returns(portfolios, panel, spec):
    """Equal-weight next-step returns of each leg, excess over the universe mean, and net of cost."""
    rows = []
    delisted = []
    for pf in portfolios:
        t = pf.formed_at
        if t is None or t + 1 > panel.T:
            raise ParameterError(f"portfolio formed at t={t} has no next step to realize")
        nxt = panel.step(t + 1)
        returns_next = dict(zip(nxt.stock_ids, nxt.returns.tolist()))
        before = len(delisted)
        r_l = _leg_return(pf.long_set, returns_next, t, delisted)
        r_s = _leg_return(pf.short_set, returns_next, t, delisted) if pf.short_set else math.nan
        bench = float(np.mean(nxt.returns))
        rows.append((t, r_l, r_s, bench, len(delisted) - before))

    t = np.array([r[0] for r in rows], dtype=int)
    r_l = np.array([r[1] for r in rows])
    r_s = np.array([r[2] for r in rows])
    bench = np.array([r[3] for r in rows])
    r_ls = r_l - r_s
    alpha = r_l - bench
    cost = spec.round_trip_cost
    return PortfolioSeries(
        t=t,
        R_L=r_l,
        R_S=r_s,
        R_LS=r_ls,
        benchmark=bench,
        alpha=alpha,
        R_L_net=r_l - cost,
        R_LS_net=r_ls - 2.0 * cost,
        alpha_net=alpha - cost,
        n_delisted=np.array([r[4] for r in rows], dtype=int),
        delisted=delisted,
    )
