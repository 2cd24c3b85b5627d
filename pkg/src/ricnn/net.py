"""Feedforward ReLU regressor with batch normalization, inverted dropout and Adam.

Each hidden layer is ``affine -> batchnorm -> ReLU -> dropout``; the output layer is a
plain affine map. Gradients are derived by hand for this fixed architecture.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BatchTooSmallError, ParameterError, ShapeError, TrainingDivergedError

SNAPSHOT_VERSION = 1

# a large random output layer swamps the [0, 1] targets and stalls early training
OUTPUT_INIT_STD = 0.01
OUTPUT_INIT_BIAS = 0.5


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 180
    hidden_dims: tuple = (150, 150, 100, 100, 50, 50)
    output_dim: int = 1
    dropout_rates: tuple = (0.50, 0.50, 0.30, 0.30, 0.10, 0.10)
    batchnorm_momentum: float = 0.99
    batchnorm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "dropout_rates", tuple(float(p) for p in self.dropout_rates))
        if len(self.hidden_dims) != len(self.dropout_rates):
            raise ParameterError("hidden_dims and dropout_rates must have equal length")
        if not self.hidden_dims:
            raise ParameterError("at least one hidden layer is required")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise ParameterError("dropout rates must lie in [0, 1)")
        if not 0.0 < self.batchnorm_momentum < 1.0:
            raise ParameterError("batchnorm_momentum must lie in (0, 1)")

    @property
    def n_layers(self):
        return len(self.hidden_dims) + 1

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def with_seed(self, seed):
        d = asdict(self)
        d["seed"] = int(seed)
        return NetworkConfig(**d)


def layer_param_names(k, n_layers):
    """Trainable parameter names of layer k (1-based)."""
    if k == n_layers:
        return [f"W{k}", f"b{k}"]
    return [f"W{k}", f"b{k}", f"gamma{k}", f"beta{k}"]


def layer_buffer_names(k, n_layers):
    if k == n_layers:
        return []
    return [f"mean{k}", f"var{k}"]


class Network:
    def __init__(self, config, params, buffers):
        self.config = config
        self.params = params
        self.buffers = buffers

    @classmethod
    def init(cls, config):
        """He-normal hidden weights, zero hidden biases; batchnorm scale 1, shift 0, running stats (0, 1).

        The output layer starts near the constant 0.5 (middle of the target range):
        weights ~ N(0, OUTPUT_INIT_STD^2), bias 0.5.
        """
        rng = np.random.default_rng(config.seed)
        params, buffers = {}, {}
        dims = config.dims
        for k in range(1, config.n_layers + 1):
            fan_in, fan_out = dims[k - 1], dims[k]
            if k == config.n_layers:
                params[f"W{k}"] = rng.normal(0.0, OUTPUT_INIT_STD, size=(fan_in, fan_out))
                params[f"b{k}"] = np.full(fan_out, OUTPUT_INIT_BIAS)
                continue
            params[f"W{k}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"b{k}"] = np.zeros(fan_out)
            params[f"gamma{k}"] = np.ones(fan_out)
            params[f"beta{k}"] = np.zeros(fan_out)
            buffers[f"mean{k}"] = np.zeros(fan_out)
            buffers[f"var{k}"] = np.ones(fan_out)
        return cls(config, params, buffers)

    def copy(self):
        return Network(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def layer_arrays(self, k):
        n = self.config.n_layers
        names = layer_param_names(k, n) + layer_buffer_names(k, n)
        return {name: (self.params if name in self.params else self.buffers)[name] for name in names}

    # -- forward / backward ---------------------------------------------------

    def _forward(self, x, mode, rng, update_stats, keep_cache):
        cfg = self.config
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ShapeError(f"expected a (B, {cfg.input_dim}) batch, got {x.shape}")
        train = mode is Mode.TRAIN
        if train and x.shape[0] < 2:
            raise BatchTooSmallError(f"Train mode needs at least 2 rows, got {x.shape[0]}")
        eps = cfg.batchnorm_eps
        mom = cfg.batchnorm_momentum
        cache = []
        h = x
        for k in range(1, cfg.n_layers):
            z = h @ self.params[f"W{k}"]
            z += self.params[f"b{k}"]
            if train:
                mu = z.mean(axis=0)
                z -= mu
                var = np.einsum("ij,ij->j", z, z) / z.shape[0]
                if update_stats:
                    self.buffers[f"mean{k}"] *= mom
                    self.buffers[f"mean{k}"] += (1.0 - mom) * mu
                    self.buffers[f"var{k}"] *= mom
                    self.buffers[f"var{k}"] += (1.0 - mom) * var
            else:
                z -= self.buffers[f"mean{k}"]
                var = self.buffers[f"var{k}"]
            inv_std = 1.0 / np.sqrt(var + eps)
            xhat = z
            xhat *= inv_std
            a = xhat * self.params[f"gamma{k}"]
            a += self.params[f"beta{k}"]
            # gate holds the ReLU derivative times the dropout mask, without the 1/(1-p) scale
            gate = a > 0.0
            np.maximum(a, 0.0, out=a)
            p = cfg.dropout_rates[k - 1]
            scale = 1.0
            if train and p > 0.0:
                keep = rng.random(a.shape) >= p
                scale = 1.0 / (1.0 - p)
                gate &= keep
                a *= keep
                a *= scale
            if keep_cache:
                cache.append((h, xhat, inv_std, gate, scale))
            h = a
        k = cfg.n_layers
        out = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
        if keep_cache:
            cache.append((h,))
        return out, cache

    def forward(self, x, mode=Mode.EVAL, rng=None, update_stats=True):
        """Predictions of shape (B,). Train mode updates running batchnorm statistics."""
        if mode is Mode.TRAIN and rng is None and any(self.config.dropout_rates):
            raise ParameterError("Train mode with dropout needs an rng")
        out, _ = self._forward(x, mode, rng, update_stats, keep_cache=False)
        return out[:, 0]

    def loss_and_grads(self, x, targets, rng=None, update_stats=True):
        """Mean squared error of one Train-mode pass and its exact gradients."""
        targets = np.asarray(targets, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != targets.shape[0]:
            raise ShapeError(f"batch {x.shape} does not align with {targets.shape[0]} targets")
        if rng is None and any(self.config.dropout_rates):
            raise ParameterError("Train mode with dropout needs an rng")
        out, cache = self._forward(x, Mode.TRAIN, rng, update_stats, keep_cache=True)
        B = x.shape[0]
        resid = out[:, 0] - targets
        loss = float(resid @ resid) / B

        n = self.config.n_layers
        grads = {}
        g = (2.0 / B) * resid[:, None]
        (h,) = cache[-1]
        grads[f"W{n}"] = h.T @ g
        grads[f"b{n}"] = g.sum(axis=0)
        g = g @ self.params[f"W{n}"].T
        for k in range(n - 1, 0, -1):
            h_in, xhat, inv_std, gate, scale = cache[k - 1]
            g = g * gate
            if scale != 1.0:
                g *= scale
            gamma = self.params[f"gamma{k}"]
            grads[f"gamma{k}"] = np.einsum("ij,ij->j", g, xhat)
            grads[f"beta{k}"] = g.sum(axis=0)
            # batchnorm backward with gx = g * gamma folded into per-column constants
            g *= gamma
            g -= grads[f"beta{k}"] * gamma / B
            g -= xhat * (grads[f"gamma{k}"] * gamma / B)
            g *= inv_std
            grads[f"W{k}"] = h_in.T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            if k > 1:
                g = g @ self.params[f"W{k}"].T
        return loss, grads


def init_network(config):
    return Network.init(config)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(net, grads, state):
    """One bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = net.params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ShapeError(f"Adam moments for {name} have shape {m.shape}, parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += state.epsilon
        p -= (state.learning_rate / c1) * m / denom


def copy_layers(source, target, k):
    """Copy weights, biases and batchnorm parameters/statistics of layers 1..k into `target`."""
    if source.config.dims != target.config.dims:
        raise ShapeError(f"layer shapes differ: {source.config.dims} vs {target.config.dims}")
    n = source.config.n_layers
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in 1..{n}, got {k}")
    for layer in range(1, k + 1):
        for name, arr in source.layer_arrays(layer).items():
            store = target.params if name in target.params else target.buffers
            store[name] = arr.copy()


# -- snapshots ---------------------------------------------------------------


@dataclass
class ModelSnapshot:
    """A frozen copy of a network plus when and how well it was captured."""

    network: Network
    t: int | None = None
    epoch: int | None = None
    train_rank_ic: float | None = None

    @classmethod
    def capture(cls, net, t=None, epoch=None, train_rank_ic=None):
        return cls(net.copy(), t, epoch, None if train_rank_ic is None else float(train_rank_ic))

    def restore(self):
        return self.network.copy()

    def metadata(self):
        return {"t": self.t, "epoch": self.epoch, "train_rank_ic": self.train_rank_ic}


def save_snapshot(snapshot, path):
    """Write a versioned ``.npz``: arrays plus a JSON header with config and capture metadata."""
    net = snapshot.network
    header = {
        "version": SNAPSHOT_VERSION,
        "config": asdict(net.config),
        "captured_at": snapshot.metadata(),
    }
    arrays = {f"param:{k}": v for k, v in net.params.items()}
    arrays.update({f"buffer:{k}": v for k, v in net.buffers.items()})
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_snapshot(path):
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("version") != SNAPSHOT_VERSION:
            raise ParameterError(f"unsupported snapshot version {header.get('version')!r}")
        params = {k.split(":", 1)[1]: z[k].copy() for k in z.files if k.startswith("param:")}
        buffers = {k.split(":", 1)[1]: z[k].copy() for k in z.files if k.startswith("buffer:")}
    config = NetworkConfig(**header["config"])
    meta = header["captured_at"]
    return ModelSnapshot(Network(config, params, buffers), meta["t"], meta["epoch"], meta["train_rank_ic"])
