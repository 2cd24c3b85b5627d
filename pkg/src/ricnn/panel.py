"""Monthly cross-sectional panels: data model, CSV ingestion and synthetic generation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IntegrityError, PanelParseError, ParameterError, SchemaError

N_FACTORS = 20

DEFAULT_FACTOR_NAMES = (
    "book_to_price",
    "earnings_to_price",
    "dividend_yield",
    "sales_to_price",
    "cashflow_to_price",
    "return_on_equity",
    "return_on_asset",
    "return_on_invested_capital",
    "accruals",
    "total_asset_growth",
    "current_ratio",
    "equity_ratio",
    "total_asset_turnover",
    "capex_growth",
    "eps_revision_1m",
    "eps_revision_3m",
    "momentum_1m",
    "momentum_12_1m",
    "volatility_60m",
    "skewness_60m",
)

# the minimum history a synthetic panel needs: 120-step window, 12-step lag, one prediction
MIN_SYNTHETIC_STEPS = 140
MIN_SYNTHETIC_STOCKS = 10


class ImputationWarning(UserWarning):
    pass


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeStep:
    """One month of the panel. Rows of `factors` and `returns` follow `stock_ids`."""

    index: int
    stock_ids: tuple
    factors: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stock_ids", tuple(str(s) for s in self.stock_ids))
        object.__setattr__(self, "factors", _frozen(self.factors).reshape(len(self.stock_ids), -1))
        object.__setattr__(self, "returns", _frozen(self.returns).reshape(-1))
        n = len(self.stock_ids)
        if len(set(self.stock_ids)) != n:
            raise IntegrityError(f"duplicate stock id in universe", step=self.index)
        if self.factors.shape[0] != n or self.returns.shape[0] != n:
            raise IntegrityError(
                f"universe has {n} stocks but factors have {self.factors.shape[0]} rows "
                f"and returns {self.returns.shape[0]} entries",
                step=self.index,
            )
        bad = ~(self.returns > -1.0)
        if bad.any():
            sid = self.stock_ids[int(np.flatnonzero(bad)[0])]
            raise IntegrityError(f"return of {sid} is <= -1 or missing", step=self.index)

    @property
    def universe(self):
        return frozenset(self.stock_ids)

    def __len__(self):
        return len(self.stock_ids)

    def row_of(self):
        return {s: k for k, s in enumerate(self.stock_ids)}


@dataclass(frozen=True)
class FactorPanel:
    steps: tuple
    factor_names: tuple = DEFAULT_FACTOR_NAMES

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        if len(self.factor_names) != N_FACTORS:
            raise SchemaError(f"expected {N_FACTORS} factor names, got {len(self.factor_names)}")
        for k, step in enumerate(self.steps, start=1):
            if step.index != k:
                raise IntegrityError(f"time indices must be consecutive from 1; got {step.index} at position {k}")
            if step.factors.shape[1] != N_FACTORS:
                raise SchemaError(f"step {k} has {step.factors.shape[1]} factor columns", step=k)

    @property
    def T(self):
        return len(self.steps)

    def step(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"time index {t} outside 1..{self.T}")
        return self.steps[t - 1]

    def has_missing(self):
        return any(np.isnan(s.factors).any() for s in self.steps)

    def with_returns(self, fn):
        """Copy of the panel with each step's returns replaced by ``fn(step)``."""
        return FactorPanel(
            [TimeStep(s.index, s.stock_ids, s.factors, fn(s)) for s in self.steps],
            self.factor_names,
        )


@dataclass
class PanelSchema:
    """Column mapping for CSV ingestion. `lags` shifts a factor back by an integer number of steps."""

    stock: str = "stock"
    time: str = "t"
    ret: str = "return"
    factors: tuple = DEFAULT_FACTOR_NAMES
    lags: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "factors" in d:
            d["factors"] = tuple(d["factors"])
        if "return" in d:
            d["ret"] = d.pop("return")
        unknown = set(d) - {"stock", "time", "ret", "factors", "lags"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)


def _parse_float(text):
    text = text.strip()
    if text == "":
        return math.nan
    return float(text)


def load_panel(path, schema=None):
    """Read a one-row-per-(stock, time) CSV into a validated panel.

    Empty factor cells become NaN (see :func:`impute_missing`). Unparseable
    numbers are collected and reported together in a :class:`PanelParseError`.
    """
    schema = schema or PanelSchema()
    if len(schema.factors) != N_FACTORS:
        raise SchemaError(f"schema maps {len(schema.factors)} factors, expected {N_FACTORS}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (schema.stock, schema.time, schema.ret, *schema.factors) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        unknown_lags = set(schema.lags) - set(schema.factors)
        if unknown_lags:
            raise SchemaError(f"lag given for unmapped factors {sorted(unknown_lags)}")

        records = {}
        bad_rows = []
        for lineno, row in enumerate(reader, start=2):
            sid = row[schema.stock].strip()
            try:
                t = int(row[schema.time])
            except (TypeError, ValueError):
                bad_rows.append((lineno, schema.time, row[schema.time]))
                continue
            try:
                ret = float(row[schema.ret])
            except (TypeError, ValueError):
                bad_rows.append((lineno, schema.ret, row[schema.ret]))
                continue
            x = np.empty(N_FACTORS)
            ok = True
            for j, col in enumerate(schema.factors):
                try:
                    x[j] = _parse_float(row[col] or "")
                except ValueError:
                    bad_rows.append((lineno, col, row[col]))
                    ok = False
            if not ok:
                continue
            if (sid, t) in records:
                raise IntegrityError(f"duplicate row for (stock={sid}, t={t})")
            records[(sid, t)] = (x, ret)

    if bad_rows:
        detail = "; ".join(f"line {ln} column {c!r}: {v!r}" for ln, c, v in bad_rows[:20])
        raise PanelParseError(f"{len(bad_rows)} unparseable cell(s): {detail}", rows=bad_rows)
    if not records:
        raise IntegrityError(f"{path}: no data rows")

    times = sorted({t for _, t in records})
    if times != list(range(1, len(times) + 1)):
        raise IntegrityError(f"non-contiguous time indices: expected 1..{len(times)}, got {times[:10]}...")

    by_t = {t: [] for t in times}
    for sid, t in records:
        by_t[t].append(sid)

    lags = np.array([int(schema.lags.get(c, 0)) for c in schema.factors])
    if (lags < 0).any():
        raise SchemaError("factor lags must be nonnegative")

    steps = []
    for t in times:
        ids = sorted(by_t[t])
        fac = np.array([records[(s, t)][0] for s in ids])
        if lags.any():
            for j in np.flatnonzero(lags):
                src = t - lags[j]
                fac[:, j] = [records[(s, src)][0][j] if (s, src) in records else math.nan for s in ids]
        ret = [records[(s, t)][1] for s in ids]
        steps.append(TimeStep(t, ids, fac, ret))
    return FactorPanel(steps, schema.factors)


def save_panel(panel, path, schema=None):
    """Write the panel in the ingestion format; floats use shortest round-trip repr."""
    schema = schema or PanelSchema(factors=panel.factor_names)

    def fmt(v):
        return "" if math.isnan(v) else repr(float(v))

    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.stock, schema.time, *schema.factors, schema.ret])
        for step in panel.steps:
            for k, sid in enumerate(step.stock_ids):
                w.writerow([sid, step.index, *(fmt(v) for v in step.factors[k]), fmt(step.returns[k])])


def impute_missing(panel):
    """Fill missing factor cells with the cross-sectional median of that factor at that step.

    A factor that is missing for every stock at a step is set to 0 (it rank-normalizes to a
    constant column) and an :class:`ImputationWarning` is emitted.
    """
    if not panel.has_missing():
        return panel
    steps = []
    for step in panel.steps:
        fac = np.array(step.factors)
        nan = np.isnan(fac)
        if nan.any():
            for j in np.flatnonzero(nan.any(axis=0)):
                col = fac[:, j]
                if nan[:, j].all():
                    warnings.warn(
                        f"factor {panel.factor_names[j]!r} entirely missing at t={step.index}",
                        ImputationWarning,
                        stacklevel=2,
                    )
                    col[:] = 0.0
                else:
                    col[nan[:, j]] = np.median(col[~nan[:, j]])
        steps.append(TimeStep(step.index, step.stock_ids, fac, step.returns))
    return FactorPanel(steps, panel.factor_names)


# --- synthetic panels -------------------------------------------------------

SIGNAL_KINDS = ("linear", "nonlinear", "none")

# weights of the linear signal; unused factors are pure distractors
LINEAR_WEIGHTS = np.zeros(N_FACTORS)
LINEAR_WEIGHTS[:4] = [0.6, -0.4, 0.3, 0.2]

RETURN_SCALE = 0.04
RETURN_FLOOR = -0.99


@dataclass(frozen=True)
class SyntheticSpec:
    n_stocks: int
    n_steps: int
    signal_kind: str = "nonlinear"
    noise_scale: float = 0.02
    turnover_rate: float = 0.01
    seed: int = 0
    persistence: float = 0.9

    def validate(self):
        if self.n_stocks < MIN_SYNTHETIC_STOCKS:
            raise ParameterError(f"n_stocks must be >= {MIN_SYNTHETIC_STOCKS}, got {self.n_stocks}")
        if self.n_steps < MIN_SYNTHETIC_STEPS:
            raise ParameterError(f"n_steps must be >= {MIN_SYNTHETIC_STEPS}, got {self.n_steps}")
        if self.signal_kind not in SIGNAL_KINDS:
            raise ParameterError(f"signal_kind must be one of {SIGNAL_KINDS}, got {self.signal_kind!r}")
        if not self.noise_scale >= 0:
            raise ParameterError("noise_scale must be nonnegative")
        if not 0 <= self.turnover_rate < 1:
            raise ParameterError("turnover_rate must lie in [0, 1)")
        if not 0 <= self.persistence < 1:
            raise ParameterError("persistence must lie in [0, 1)")


def planted_signal(x, kind):
    """The score that drives next-step returns in synthetic panels.

    nonlinear: ``x0*x1 + sign(x2)*x3`` (a product and a threshold interaction, neither
    of which has a linear component);
    linear: a fixed weighted sum of the first four factors; none: zero.
    """
    x = np.asarray(x, dtype=float)
    if kind == "nonlinear":
        return x[..., 0] * x[..., 1] + np.where(x[..., 2] > 0, x[..., 3], -x[..., 3])
    if kind == "linear":
        return x @ LINEAR_WEIGHTS
    if kind == "none":
        return np.zeros(x.shape[:-1])
    raise ParameterError(f"unknown signal kind {kind!r}")


def generate_panel(spec):
    """Generate a panel whose returns at t+1 depend on factors at t.

    Factors follow a per-stock AR(1) with unit stationary variance. Returns are
    ``RETURN_SCALE * tanh(signal / 2) + noise_scale * N(0, 1)``, floored at -0.99.
    Each step ``round(turnover_rate * n_stocks)`` members are replaced by new ids.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rho = spec.persistence
    innov = math.sqrt(1.0 - rho * rho)
    n_swap = int(round(spec.turnover_rate * spec.n_stocks))
    width = max(6, len(str(spec.n_stocks + n_swap * spec.n_steps)))

    next_id = 0

    def new_id():
        nonlocal next_id
        next_id += 1
        return f"S{next_id:0{width}d}"

    active = [new_id() for _ in range(spec.n_stocks)]
    latent = rng.standard_normal((spec.n_stocks, N_FACTORS))  # state at t-1

    steps = []
    for t in range(1, spec.n_steps + 1):
        if t > 1 and n_swap:
            out = np.sort(rng.choice(len(active), size=n_swap, replace=False))
            for k in out:
                active[k] = new_id()
            latent[out] = rng.standard_normal((n_swap, N_FACTORS))
        signal = planted_signal(latent, spec.signal_kind)
        noise = rng.standard_normal(len(active)) if spec.noise_scale > 0 else np.zeros(len(active))
        if spec.signal_kind == "none":
            returns = spec.noise_scale * noise
        else:
            returns = RETURN_SCALE * np.tanh(signal / 2.0) + spec.noise_scale * noise
        returns = np.maximum(returns, RETURN_FLOOR)
        latent = rho * latent + innov * rng.standard_normal(latent.shape)
        order = np.argsort(active)
        steps.append(TimeStep(t, [active[k] for k in order], latent[order], returns[order]))
    return FactorPanel(steps)
