"""Augmented 180-dim feature vectors and normalized-rank targets.

Feature layout for a sample (i, t), all on rank-normalized factors:

    [  0: 20)  x_t          [ 20: 40)  x_{t-3}       [ 40: 60)  x_{t-6}
    [ 60: 80)  x_{t-9}      [ 80:100)  x_{t-12}
    [100:120)  rd(x_t, x_{t-3})        [120:140)  rd(x_t, x_{t-6})
    [140:160)  rd(x_t, x_{t-9})        [160:180)  rd(x_t, x_{t-12})

where rd is :func:`relative_diff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateUniverseError, EmptySampleSetError, ParameterError
from .panel import N_FACTORS

LAGS = (0, 3, 6, 9, 12)
DIFF_LAGS = LAGS[1:]
MAX_LAG = LAGS[-1]
N_FEATURES = N_FACTORS * (len(LAGS) + len(DIFF_LAGS))
FIRST_SAMPLE_T = MAX_LAG + 1


def relative_diff(x, y):
    """Elementwise ``2 (x - y) / (|x| + |y|)``, with 0/0 defined as 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    den = np.abs(x) + np.abs(y)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, 2.0 * (x - y) / np.where(den > 0, den, 1.0), 0.0)
    return out if out.ndim else float(out)


def normalized_rank(values, axis=0):
    """Map values to [0, 1] by midrank: smallest -> 0, largest -> 1, ``(rank - 1) / (n - 1)``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis] if values.ndim else 0
    if n < 2:
        raise DegenerateUniverseError(f"need at least 2 values to rank, got {n}")
    return (rankdata(values, method="average", axis=axis) - 1.0) / (n - 1.0)


def normalize_factors(step):
    """Rank-normalize each factor column of a step within its universe."""
    if len(step) < 2:
        raise DegenerateUniverseError(f"universe has {len(step)} stock(s)", step=step.index)
    if np.isnan(step.factors).any():
        raise ParameterError("factors must be imputed before normalization", step=step.index)
    return normalized_rank(step.factors, axis=0)


@dataclass
class SampleSet:
    """Training examples stacked row-wise, ordered by time then stock id."""

    features: np.ndarray
    targets: np.ndarray
    times: np.ndarray
    stock_ids: np.ndarray
    skipped: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.targets)

    @property
    def time_steps(self):
        return np.unique(self.times)

    def counts(self):
        ts, n = np.unique(self.times, return_counts=True)
        return dict(zip(ts.tolist(), n.tolist()))

    def subset(self, mask):
        return SampleSet(self.features[mask], self.targets[mask], self.times[mask], self.stock_ids[mask])

    def window(self, lo, hi):
        """Samples with ``lo <= time <= hi``."""
        return self.subset((self.times >= lo) & (self.times <= hi))

    def at(self, t):
        return self.subset(self.times == t)

    def groups(self):
        """Yield ``(t, slice)`` per time step; rows are contiguous by construction."""
        ts, starts = np.unique(self.times, return_index=True)
        bounds = list(starts) + [len(self.times)]
        for k, t in enumerate(ts):
            yield int(t), slice(bounds[k], bounds[k + 1])


class FeatureBuilder:
    """Caches per-step normalized factors of one panel."""

    def __init__(self, panel):
        self.panel = panel
        self._norm = {}
        self._rows = {}

    def _normalized(self, t):
        if t not in self._norm:
            step = self.panel.step(t)
            self._norm[t] = normalize_factors(step)
            self._rows[t] = step.row_of()
        return self._norm[t], self._rows[t]

    def eligible(self, t, need_next):
        """Stock ids of U_t present at every lag (and at t+1 when `need_next`)."""
        step = self.panel.step(t)
        keep = []
        lag_sets = [self.panel.step(t - lag).universe for lag in DIFF_LAGS]
        nxt = self.panel.step(t + 1).universe if need_next else None
        for sid in step.stock_ids:
            if all(sid in u for u in lag_sets) and (nxt is None or sid in nxt):
                keep.append(sid)
        return keep

    def assemble(self, t, ids):
        blocks = []
        for lag in LAGS:
            norm, rows = self._normalized(t - lag)
            blocks.append(norm[[rows[s] for s in ids]])
        current = blocks[0]
        diffs = [relative_diff(current, blocks[k]) for k in range(1, len(LAGS))]
        return np.hstack(blocks + diffs)

    def scoring_features(self, t):
        """Features for every stock of U_t with full lag history. Uses no data after t."""
        if t < FIRST_SAMPLE_T:
            raise ParameterError(f"t={t} has no 12-step lag history")
        ids = self.eligible(t, need_next=False)
        if not ids:
            return [], np.empty((0, N_FEATURES))
        return ids, self.assemble(t, ids)

    def samples_at(self, t):
        ids = self.eligible(t, need_next=True)
        n_skipped = len(self.panel.step(t)) - len(ids)
        if len(ids) < 2:
            return None, len(self.panel.step(t))
        nxt = self.panel.step(t + 1)
        rows = nxt.row_of()
        target = normalized_rank(nxt.returns[[rows[s] for s in ids]])
        return (ids, self.assemble(t, ids), target), n_skipped


def build_samples(panel, t_range, builder=None):
    """All eligible (stock, t) samples for ``t_range[0] <= t <= t_range[1]``."""
    lo, hi = t_range
    if lo < FIRST_SAMPLE_T:
        raise ParameterError(f"t_range starts at {lo}; lags need t >= {FIRST_SAMPLE_T}")
    if hi > panel.T - 1:
        raise ParameterError(f"t_range ends at {hi}; targets need t <= T-1 = {panel.T - 1}")
    builder = builder or FeatureBuilder(panel)
    feats, targets, times, ids, skipped = [], [], [], [], {}
    for t in range(lo, hi + 1):
        got, n_skipped = builder.samples_at(t)
        if n_skipped:
            skipped[t] = n_skipped
        if got is None:
            continue
        sids, x, r = got
        feats.append(x)
        targets.append(r)
        times.append(np.full(len(sids), t))
        ids.extend(sids)
    if not feats:
        raise EmptySampleSetError(f"no eligible samples in t={lo}..{hi}")
    return SampleSet(
        np.vstack(feats),
        np.concatenate(targets),
        np.concatenate(times),
        np.array(ids, dtype=object),
        skipped,
    )
