"""Run configuration: a YAML document resolved into typed sections with defaults filled in."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError, RicError
from .net import NetworkConfig
from .panel import PanelSchema, SyntheticSpec
from .portfolio import PortfolioSpec
from .trainer import Seeds, TrainPolicy

MODELS = ("ric_nn", "epoch_nn", "lasso", "ridge")


@dataclass
class PanelSource:
    file: str | None = None
    schema: dict = field(default_factory=dict)
    synthetic: dict | None = None

    def validate(self):
        if (self.file is None) == (self.synthetic is None):
            raise ConfigError("panel needs exactly one of 'file' or 'synthetic'")
        if self.synthetic is not None:
            if "seed" in self.synthetic:
                raise ConfigError("synthetic panel seed comes from seeds.data, not panel.synthetic.seed")
            self.synthetic_spec(0)
        else:
            try:
                PanelSchema.from_dict(self.schema)
            except RicError as exc:
                raise ConfigError(str(exc)) from None

    def synthetic_spec(self, seed):
        try:
            spec = SyntheticSpec(**self.synthetic, seed=seed)
            spec.validate()
        except (TypeError, RicError) as exc:
            raise ConfigError(f"bad synthetic panel spec: {exc}") from None
        return spec


@dataclass
class PolicySection:
    v_init: float = 0.16
    v_stop: float = 0.20
    epochs: int = 56
    auto_epoch_from_first_step: bool = False
    max_epochs: int = 500
    window: int = 120
    batch_size: int = 300
    learning_rate: float = 1e-3
    warm_start: bool = True


@dataclass
class NetworkSection:
    hidden_dims: list = field(default_factory=lambda: [150, 150, 100, 100, 50, 50])
    dropout_rates: list = field(default_factory=lambda: [0.5, 0.5, 0.3, 0.3, 0.1, 0.1])
    batchnorm_momentum: float = 0.99


@dataclass
class LinearSection:
    lam: float = 0.001


@dataclass
class PortfolioSection:
    quantile: float = 0.2
    cost_per_side: float = 0.0005


@dataclass
class EvaluationSection:
    t_start: int | None = None
    t_end: int | None = None


@dataclass
class SeedSection:
    init: int = 0
    dropout: int = 1
    shuffle: int = 2
    data: int = 3


@dataclass
class RunConfig:
    panel: PanelSource
    model: str = "ric_nn"
    policy: PolicySection = field(default_factory=PolicySection)
    network: NetworkSection = field(default_factory=NetworkSection)
    linear: LinearSection = field(default_factory=LinearSection)
    portfolio: PortfolioSection = field(default_factory=PortfolioSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    transfer_source: str | None = None
    output_dir: str = "out"

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        d = dict(d)
        sections = {
            "policy": PolicySection,
            "network": NetworkSection,
            "linear": LinearSection,
            "portfolio": PortfolioSection,
            "evaluation": EvaluationSection,
            "seeds": SeedSection,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "panel" not in d:
            raise ConfigError("config needs a 'panel' section")
        kwargs = {"panel": _section(PanelSource, d.pop("panel"), "panel")}
        for name, typ in sections.items():
            if name in d:
                kwargs[name] = _section(typ, d.pop(name), name)
        kwargs.update(d)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with Path(path).open() as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        return cls.from_dict(data)

    def validate(self):
        self.panel.validate()
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        try:
            self.train_policy()
            self.network_config()
            self.portfolio_spec()
        except RicError as exc:
            raise ConfigError(str(exc)) from None
        if self.model in ("lasso",) and self.linear.lam < 0:
            raise ConfigError("lasso regularizer must be >= 0")
        if self.model == "ridge" and not self.linear.lam > 0:
            raise ConfigError("ridge regularizer must be > 0")
        if self.transfer_source and self.model not in ("ric_nn", "epoch_nn"):
            raise ConfigError("transfer_source only applies to network models")

    # -- derived objects ------------------------------------------------------

    def train_policy(self):
        p = self.policy
        return TrainPolicy(
            mode="fixed_epoch" if self.model == "epoch_nn" else "rank_ic",
            v_init=p.v_init,
            v_stop=p.v_stop,
            epochs=p.epochs,
            max_epochs=p.max_epochs,
            window=p.window,
            batch_size=p.batch_size,
            learning_rate=p.learning_rate,
        )

    def network_config(self):
        n = self.network
        return NetworkConfig(
            hidden_dims=tuple(n.hidden_dims),
            dropout_rates=tuple(n.dropout_rates),
            batchnorm_momentum=n.batchnorm_momentum,
            seed=self.seeds.init,
        )

    def portfolio_spec(self):
        return PortfolioSpec("long_short", self.portfolio.quantile, self.portfolio.cost_per_side)

    def seed_streams(self):
        return Seeds(**asdict(self.seeds))

    def to_dict(self):
        return asdict(self)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self):
        """Hash of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _section(typ, data, name):
    if data is None:
        return typ()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = {f.name for f in fields(typ)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return typ(**data)


def set_dotted(d, key, value):
    """Set ``d['a']['b'] = value`` for ``key == 'a.b'``, creating sections as needed."""
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
    d[parts[-1]] = value
