"""Rank IC and the annualized risk/return measures of a monthly return series."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DomainError,
    InsufficientDataError,
    ShapeError,
    UndefinedCorrelationError,
    ZeroRiskError,
)

PERIODS_PER_YEAR = 12


def rank_ic(actual, predicted):
    """Spearman correlation as the Pearson correlation of midranks."""
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {p.size}")
    if a.size < 2:
        raise ShapeError(f"rank IC needs at least 2 entries, got {a.size}")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rp = rankdata(p) - (p.size + 1) / 2.0
    den = math.sqrt(float(ra @ ra) * float(rp @ rp))
    if den == 0.0:
        raise UndefinedCorrelationError("rank IC undefined for a constant vector")
    return float(np.clip((ra @ rp) / den, -1.0, 1.0))


def _values(series):
    v = np.asarray(series, dtype=float).ravel()
    if v.size == 0:
        raise InsufficientDataError("empty return series")
    return v


def _check_compoundable(v):
    if not (v > -1.0).all():
        raise DomainError("every return must exceed -1 to compound")


def annualized_excess(series):
    """``prod(1 + v) ** (12 / T) - 1``; used for both Alpha and AR."""
    v = _values(series)
    _check_compoundable(v)
    return math.expm1(PERIODS_PER_YEAR / v.size * float(np.log1p(v).sum()))


def annualized_risk(series):
    """``sqrt(12) * sample standard deviation``; used for both TE and RISK."""
    v = _values(series)
    if v.size < 2:
        raise InsufficientDataError(f"risk needs T >= 2, got {v.size}")
    return math.sqrt(PERIODS_PER_YEAR * float(np.var(v, ddof=1)))


def risk_adjusted(series):
    ret = annualized_excess(series)
    risk = annualized_risk(series)
    if risk == 0.0:
        raise ZeroRiskError(ret, risk)
    return ret / risk


def max_drawdown(series):
    """Largest fall of compounded wealth below its running peak, in [-1, 0].

    The peak starts at the initial wealth of 1, so a loss in the first period counts.
    """
    v = _values(series)
    _check_compoundable(v)
    wealth = np.cumprod(1.0 + v)
    dd = wealth / np.maximum(1.0, np.maximum.accumulate(wealth)) - 1.0
    return float(min(0.0, dd.min()))


@dataclass(frozen=True)
class MetricsReport:
    annualized_return: float
    risk: float
    risk_adjusted: float
    max_drawdown: float

    def to_dict(self):
        return asdict(self)


def metrics_report(series, drawdown_series=None):
    """Bundle the four measures. `drawdown_series` defaults to `series`.

    The long strategy measures Alpha/TE/IR on excess returns but its drawdown on the
    raw long-leg returns, hence the separate argument. `risk_adjusted` is NaN when
    the risk is zero.
    """
    ret = annualized_excess(series)
    risk = annualized_risk(series)
    ratio = ret / risk if risk > 0 else math.nan
    dd = max_drawdown(series if drawdown_series is None else drawdown_series)
    return MetricsReport(ret, risk, ratio, dd)
