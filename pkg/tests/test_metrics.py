import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import compound_annualized, drawdown, sample_std_annualized, spearman_closed_form
from ricnn.errors import (
    DomainError,
    InsufficientDataError,
    ShapeError,
    UndefinedCorrelationError,
    ZeroRiskError,
)
from ricnn.metrics import (
    annualized_excess,
    annualized_risk,
    max_drawdown,
    metrics_report,
    rank_ic,
    risk_adjusted,
)

returns = st.lists(st.floats(-0.5, 0.5, allow_nan=False), min_size=2, max_size=60)


# -- rank IC -------------------------------------------------------------------


def test_rank_ic_identity():
    assert rank_ic([3, 1, 2], [3, 1, 2]) == 1.0


def test_rank_ic_reversed():
    assert rank_ic([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0


def test_rank_ic_hand_example():
    assert rank_ic([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-15)


def test_rank_ic_errors():
    with pytest.raises(ShapeError):
        rank_ic([1, 2, 3], [1, 2])
    with pytest.raises(UndefinedCorrelationError):
        rank_ic([1, 2, 3], [5, 5, 5])


def test_rank_ic_matches_closed_form_on_permutations():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(3, 51))
        a, b = rng.permutation(n), rng.permutation(n)
        assert abs(rank_ic(a, b) - spearman_closed_form(list(a), list(b))) < 1e-12


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=40))
def test_rank_ic_symmetric_and_transform_invariant(pairs):
    a = np.array([p[0] for p in pairs], dtype=float)
    b = np.array([p[1] for p in pairs], dtype=float)
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    ic = rank_ic(a, b)
    assert ic == pytest.approx(rank_ic(b, a), abs=1e-14)
    assert ic == pytest.approx(rank_ic(np.exp(a / 20), b ** 3), abs=1e-14)
    assert -1.0 <= ic <= 1.0


# -- annualization -------------------------------------------------------------


def test_annualized_excess_examples():
    assert annualized_excess([0.0] * 12) == 0.0
    assert annualized_excess([0.01] * 12) == pytest.approx(1.01 ** 12 - 1, rel=1e-13)
    assert annualized_excess([0.01] * 24) == pytest.approx(0.126825, abs=5e-7)
    with pytest.raises(DomainError):
        annualized_excess([0.1, -1.0])


@given(st.lists(st.floats(-0.3, 0.3), min_size=12, max_size=12), st.integers(1, 5))
def test_annualized_excess_is_horizon_free(block, copies):
    assert annualized_excess(block * copies) == pytest.approx(annualized_excess(block), rel=1e-9, abs=1e-12)


@given(returns)
def test_annualized_excess_matches_direct_compounding(values):
    assert annualized_excess(values) == pytest.approx(compound_annualized(values), rel=1e-9, abs=1e-12)


def test_annualized_risk_examples():
    assert annualized_risk([0.02] * 5) == 0.0
    assert annualized_risk([0.01, -0.01]) == pytest.approx(math.sqrt(0.0024), rel=1e-14)
    v = np.array([0.03, -0.01, 0.02, 0.005])
    assert annualized_risk(3 * v) == pytest.approx(3 * annualized_risk(v), rel=1e-14)
    with pytest.raises(InsufficientDataError):
        annualized_risk([0.01])
    with pytest.raises(InsufficientDataError):
        annualized_excess([])


@given(returns)
def test_annualized_risk_matches_oracle(values):
    assert annualized_risk(values) == pytest.approx(sample_std_annualized(values), rel=1e-9, abs=1e-15)


# -- ratios --------------------------------------------------------------------


def test_table_one_ratios():
    # long column: Alpha 1.23%, TE 4.14% -> IR 0.30; long-short: AR 3.86%, RISK 7.85% -> R/R 0.49
    assert round(0.0123 / 0.0414, 2) == 0.30
    assert round(0.0386 / 0.0785, 2) == 0.49


def test_risk_adjusted_zero_risk_carries_components():
    with pytest.raises(ZeroRiskError) as info:
        risk_adjusted([0.01] * 6)
    assert info.value.risk == 0.0
    assert info.value.annualized_return == pytest.approx(1.01 ** 12 - 1)
    assert isinstance(info.value, ZeroDivisionError)


def test_zero_mean_series_has_near_zero_ratio():
    # compounding drag makes it slightly negative, about -0.035 here
    assert abs(risk_adjusted([0.01, -0.01] * 12)) < 0.05


@given(returns)
def test_report_identity(values):
    if annualized_risk(values) == 0:
        return
    rep = metrics_report(values)
    assert rep.risk_adjusted * rep.risk == pytest.approx(rep.annualized_return, rel=1e-12, abs=1e-15)
    assert rep.risk >= 0


def test_report_nan_ratio_when_flat():
    rep = metrics_report([0.0, 0.0, 0.0])
    assert math.isnan(rep.risk_adjusted)
    assert rep.max_drawdown == 0.0


# -- drawdown ------------------------------------------------------------------


def test_max_drawdown_examples():
    assert max_drawdown([0.0, 0.01, 0.2, 0.0]) == 0.0
    assert max_drawdown([0.10, -0.50]) == pytest.approx(-0.5, abs=1e-15)
    assert max_drawdown([-0.20, 0.25]) == pytest.approx(-0.2, abs=1e-15)
    with pytest.raises(DomainError):
        max_drawdown([0.1, -1.5])


@given(returns)
def test_max_drawdown_bounds_and_oracle(values):
    dd = max_drawdown(values)
    assert -1.0 <= dd <= 0.0
    assert dd == pytest.approx(drawdown(values), abs=1e-12)


@given(st.lists(st.floats(0, 0.5), min_size=1, max_size=40))
def test_max_drawdown_zero_on_nonnegative(values):
    assert max_drawdown(values) == 0.0


def test_long_report_uses_separate_drawdown_series():
    alpha = [0.01, 0.02, 0.01]
    raw = [0.10, -0.50, 0.0]
    rep = metrics_report(alpha, raw)
    assert rep.max_drawdown == pytest.approx(-0.5)
    assert rep.annualized_return == annualized_excess(alpha)
