"""Cross-sectional return ranking with rank-IC-gated neural networks, and its backtest."""

from .errors import RicError
from .features import build_samples, normalized_rank, relative_diff
from .metrics import annualized_excess, annualized_risk, max_drawdown, rank_ic, risk_adjusted
from .net import Mode, Network, NetworkConfig, copy_layers
from .panel import FactorPanel, SyntheticSpec, TimeStep, generate_panel, load_panel, save_panel
from .trainer import TrainPolicy, rolling_backtest, train_one_step

__version__ = "0.1.0"
