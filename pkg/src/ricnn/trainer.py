"""Rolling-horizon training with rank-IC initialization and stopping.

At each step t the network is trained on the trailing window of samples whose
targets are known by t. In RankIC mode two snapshots are taken: the first epoch
whose window-average rank IC reaches ``v_init`` (the seed for step t+1) and the first
epoch reaching ``v_stop`` (the model used to score step t).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateStepError,
    ParameterError,
    RicError,
    TrainingDivergedError,
    UndefinedCorrelationError,
)
from .features import FIRST_SAMPLE_T, FeatureBuilder, build_samples
from .metrics import rank_ic
from .net import AdamState, Mode, ModelSnapshot, Network, adam_step, copy_layers

log = logging.getLogger(__name__)

TRANSFER_LAYERS = 4


class Terminated(str, enum.Enum):
    REACHED_STOP = "ReachedStop"
    REACHED_EPOCH_TARGET = "ReachedEpochTarget"
    HIT_CAP = "HitCap"


@dataclass(frozen=True)
class TrainPolicy:
    mode: str = "rank_ic"  # "rank_ic" or "fixed_epoch"
    v_init: float = 0.16
    v_stop: float = 0.20
    epochs: int = 56
    max_epochs: int = 500
    window: int = 120
    batch_size: int = 300
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("rank_ic", "fixed_epoch"):
            raise ParameterError(f"unknown training mode {self.mode!r}")
        if self.mode == "rank_ic" and not 0.0 < self.v_init < self.v_stop <= 1.0:
            raise ParameterError(f"need 0 < v_init < v_stop <= 1, got {self.v_init}, {self.v_stop}")
        if self.mode == "fixed_epoch" and self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if self.window < 1 or self.batch_size < 2:
            raise ParameterError("window must be >= 1 and batch_size >= 2")

    @property
    def rank_ic_mode(self):
        return self.mode == "rank_ic"


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rank_ic: float


@dataclass
class TrainOutcome:
    final_model: ModelSnapshot
    init_seed_model: ModelSnapshot | None
    epochs_run: int
    trace: list
    terminated: Terminated

    @property
    def rank_ic_trace(self):
        return [r.rank_ic for r in self.trace]


def window_rank_ic(net, samples, window=None, constant_as_zero=False):
    """Mean over time steps of the Eval-mode rank IC between targets and predictions.

    With `constant_as_zero`, a step whose predictions are all equal counts as IC 0
    instead of raising.
    """
    if window is not None:
        samples = samples.window(*window)
    if len(samples) == 0:
        raise DegenerateStepError("empty training window")
    preds = net.forward(samples.features, Mode.EVAL)
    ics = []
    for t, sl in samples.groups():
        if sl.stop - sl.start < 2:
            raise DegenerateStepError(f"step has {sl.stop - sl.start} sample(s)", step=t)
        try:
            ics.append(rank_ic(samples.targets[sl], preds[sl]))
        except UndefinedCorrelationError:
            if not constant_as_zero:
                raise
            ics.append(0.0)
    return float(np.mean(ics))


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
        del bounds[-2]  # a 1-row tail cannot be batch-normalized; fold it into the previous batch
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def train_one_step(net, samples, policy, rng, dropout_rng=None, t=None):
    """Train `net` in place on `samples` (one window) and return the outcome.

    `rng` shuffles mini-batches; `dropout_rng` (default: `rng`) draws dropout masks.
    Adam moments start from zero on every call.
    """
    if len(samples) < 2:
        raise DegenerateStepError("training window has fewer than 2 samples", step=t)
    dropout_rng = rng if dropout_rng is None else dropout_rng
    adam = AdamState(learning_rate=policy.learning_rate)
    x, y = samples.features, samples.targets
    cap = policy.max_epochs if policy.rank_ic_mode else policy.epochs

    trace = []
    init_seed = None
    best = None
    for epoch in range(1, cap + 1):
        losses = []
        for idx in _batches(len(y), policy.batch_size, rng):
            loss, grads = net.loss_and_grads(x[idx], y[idx], dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", trace=trace, step=t)
            try:
                adam_step(net, grads, adam)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch}", trace=trace, step=t) from None
            losses.append(loss * len(idx))
        ic = window_rank_ic(net, samples, constant_as_zero=True)
        trace.append(EpochRecord(epoch, float(np.sum(losses) / len(y)), ic))

        if not policy.rank_ic_mode:
            continue
        if best is None or ic > best.train_rank_ic:
            best = ModelSnapshot.capture(net, t, epoch, ic)
        if init_seed is None and ic >= policy.v_init:
            init_seed = ModelSnapshot.capture(net, t, epoch, ic)
        if ic >= policy.v_stop:
            final = ModelSnapshot.capture(net, t, epoch, ic)
            return TrainOutcome(final, init_seed, epoch, trace, Terminated.REACHED_STOP)

    if not policy.rank_ic_mode:
        final = ModelSnapshot.capture(net, t, cap, trace[-1].rank_ic)
        return TrainOutcome(final, None, cap, trace, Terminated.REACHED_EPOCH_TARGET)
    log.warning("t=%s: rank IC never reached %.3f in %d epochs (best %.4f at epoch %d)",
                t, policy.v_stop, cap, best.train_rank_ic, best.epoch)
    return TrainOutcome(best, init_seed, cap, trace, Terminated.HIT_CAP)


@dataclass
class StepScores:
    """Scores emitted at time t for stocks in U_t; higher means a better expected rank at t+1."""

    t: int
    stock_ids: list
    scores: np.ndarray
    outcome: TrainOutcome | None = None
    initial_network: Network | None = field(default=None, repr=False)


@dataclass(frozen=True)
class Seeds:
    """Independent random streams. Per-step generators are derived from (seed, t)."""

    init: int = 0
    dropout: int = 1
    shuffle: int = 2
    data: int = 3

    def init_seed(self, t):
        return int(np.random.SeedSequence([self.init, t]).generate_state(1)[0])

    def shuffle_rng(self, t):
        return np.random.default_rng([self.shuffle, t])

    def dropout_rng(self, t):
        return np.random.default_rng([self.dropout, t])


def check_backtest_range(panel, window, t_start, t_end):
    lo = FIRST_SAMPLE_T + window + 1
    if t_start < lo:
        raise ParameterError(f"t_start={t_start} too early: needs >= {lo} (lags + window + target)")
    if t_end > panel.T - 1:
        raise ParameterError(f"t_end={t_end} exceeds T-1={panel.T - 1}")
    if t_end < t_start:
        raise ParameterError("t_end < t_start")


def training_window(samples, t, n):
    """Samples for times t-n .. t-1; their targets are realized at or before t."""
    win = samples.window(t - n, t - 1)
    if len(win) and win.times.max() + 1 > t:
        raise AssertionError("lookahead: window contains a target realized after t")
    return win


def rolling_backtest(panel, policy, t_start, t_end, config, seeds=Seeds(), warm_start=True,
                     transfer_source=None, keep_initial=False, samples=None):
    """Walk forward from t_start to t_end, training at each step and scoring U_t.

    Initialization at each step, in priority order: the first 4 layers of
    `transfer_source` (first step only), the previous step's init-seed snapshot when
    `warm_start`, otherwise a fresh network seeded from ``seeds.init_seed(t)``.
    """
    check_backtest_range(panel, policy.window, t_start, t_end)
    builder = FeatureBuilder(panel)
    if samples is None:
        samples = build_samples(panel, (t_start - policy.window, t_end - 1), builder)
    out = []
    carry = None
    for t in range(t_start, t_end + 1):
        try:
            step = _rolling_step(builder, samples, policy, config, seeds, t,
                                 transfer_source if t == t_start else None,
                                 carry if warm_start else None, keep_initial)
        except RicError as exc:
            if exc.step is None:
                exc.step = t
            raise
        outcome = step.outcome
        if policy.rank_ic_mode:
            carry = outcome.init_seed_model or outcome.final_model
        else:
            carry = outcome.final_model
        out.append(step)
        log.info("t=%d epochs=%d ic=%.4f %s", t, outcome.epochs_run,
                 outcome.final_model.train_rank_ic, outcome.terminated.value)
    return out


def _rolling_step(builder, samples, policy, config, seeds, t, transfer_source, carry, keep_initial):
    net = Network.init(config.with_seed(seeds.init_seed(t)))
    if transfer_source is not None:
        copy_layers(transfer_source.network, net, TRANSFER_LAYERS)
    elif carry is not None:
        net = carry.restore()
    initial = net.copy() if keep_initial else None

    win = training_window(samples, t, policy.window)
    outcome = train_one_step(net, win, policy, seeds.shuffle_rng(t), seeds.dropout_rng(t), t=t)
    ids, x = builder.scoring_features(t)
    if len(ids) < 2:
        raise DegenerateStepError(f"{len(ids)} eligible stock(s) to score", step=t)
    scores = outcome.final_model.network.forward(x, Mode.EVAL)
    return StepScores(t, ids, scores, outcome, initial)


def auto_epochs(panel, policy, t_start, config, seeds=Seeds()):
    """Epoch count at which the first step's training rank IC reaches ``v_stop``."""
    probe = TrainPolicy(mode="rank_ic", v_init=policy.v_init, v_stop=policy.v_stop,
                        max_epochs=policy.max_epochs, window=policy.window,
                        batch_size=policy.batch_size, learning_rate=policy.learning_rate)
    check_backtest_range(panel, probe.window, t_start, t_start)
    samples = build_samples(panel, (t_start - probe.window, t_start - 1))
    net = Network.init(config.with_seed(seeds.init_seed(t_start)))
    outcome = train_one_step(net, samples, probe, seeds.shuffle_rng(t_start),
                             seeds.dropout_rng(t_start), t=t_start)
    return outcome.epochs_run
