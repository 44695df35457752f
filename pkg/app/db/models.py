"""
Domain records.

Configuration-like records are pydantic models; records that carry numeric
arrays are frozen dataclasses validated on construction.
"""

from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.core.exceptions import ConfigError, ContractError, DataError

SIMPLEX_TOL = 1e-9
CHECKPOINT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration records
# ---------------------------------------------------------------------------


class GanHyperParams(BaseModel):
    """Generator/discriminator sizes and training settings."""

    model_config = ConfigDict(frozen=True)

    assets: int
    wb: int = 40
    wf: int = 20
    latent_factor: int = 2
    cond_layers: int = 4
    cond_channel_factor: int = 2
    tconv_layers: int = 2
    disc_layers: int = 5
    kernel_size: int = 5
    stride: int = 2
    leaky_slope: float = 0.2
    learning_rate: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    training_steps: int = 15000
    gp_weight: float = 10.0
    n_critic: int = 5
    batch_size: int = 32
    sn_iterations: int = 1
    sn_warmup: int = 50
    sn_tol: float = 1e-6
    sn_max_iterations: int = 1000
    log_every: int = 100
    checkpoint_every: int = 1000
    collapse_threshold: float = 1e-4
    diversity_samples: int = 16

    @property
    def window(self) -> int:
        return self.wb + self.wf

    @property
    def latent_size(self) -> int:
        return self.latent_factor * self.assets

    @property
    def cond_channels(self) -> int:
        return self.cond_channel_factor * self.assets

    @property
    def simulator_channels(self) -> int:
        return self.assets * 2**self.tconv_layers

    @property
    def simulator_length(self) -> int:
        return self.wf // 2**self.tconv_layers

    def check(self) -> None:
        """Raise ConfigError if the sizes are inconsistent."""
        positive = {
            "assets": self.assets,
            "wb": self.wb,
            "wf": self.wf,
            "latent_factor": self.latent_factor,
            "cond_layers": self.cond_layers,
            "cond_channel_factor": self.cond_channel_factor,
            "disc_layers": self.disc_layers,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "n_critic": self.n_critic,
            "batch_size": self.batch_size,
            "diversity_samples": self.diversity_samples,
        }
        bad = [name for name, value in positive.items() if value <= 0]
        if bad:
            raise ConfigError(f"Hyperparameters must be positive: {', '.join(bad)}")
        if self.tconv_layers < 0 or self.training_steps < 0:
            raise ConfigError("tconv_layers and training_steps must be non-negative")
        if self.learning_rate <= 0 or self.gp_weight < 0:
            raise ConfigError("learning_rate must be positive and gp_weight non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.wf % 2**self.tconv_layers != 0:
            raise ConfigError(
                f"wf={self.wf} must be divisible by 2^{self.tconv_layers} so that "
                f"{self.simulator_channels} channels x {self.wf // 2**self.tconv_layers} "
                f"steps reshape to wf x assets"
            )
        if min(self.sn_iterations, self.sn_warmup, self.sn_max_iterations) < 0 or self.sn_tol < 0:
            raise ConfigError("Power-iteration counts and tolerance must be non-negative")


class SynthConfig(BaseModel):
    """Correlated geometric Brownian motion market (daily drift and volatility)."""

    model_config = ConfigDict(frozen=True)

    assets: int
    days: int
    drift: List[float]
    volatility: List[float]
    correlation: List[List[float]]
    seed: int = 0
    start_price: float = 100.0
    start_date: date = date(2010, 1, 4)
    tickers: Optional[List[str]] = None

    def ticker_names(self) -> List[str]:
        if self.tickers is not None:
            return list(self.tickers)
        return [f"SYN{i + 1}" for i in range(self.assets)]


class NsgaParams(BaseModel):
    """NSGA-II settings."""

    model_config = ConfigDict(frozen=True)

    population: int = 100
    generations: int = 200
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0
    crossover_prob: float = 0.9
    mutation_prob: Optional[float] = None

    def check(self) -> None:
        if self.population < 4 or self.generations < 0:
            raise ConfigError("population must be >= 4 and generations >= 0")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ConfigError("crossover_prob must lie in [0, 1]")


StrategyKind = Literal["pagan", "markowitz", "default", "buy_and_hold"]


class StrategySpec(BaseModel):
    """One strategy to backtest."""

    model_config = ConfigDict(frozen=True)

    kind: StrategyKind
    risk_level: int = 13
    horizon: int = 20
    cadence: int = 1
    asset: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind == "buy_and_hold":
            return f"buy_and_hold_{self.asset}"
        return f"{self.kind}_z{self.risk_level}"

    def check(self, z_levels: int, assets: int) -> None:
        if self.cadence < 1:
            raise ConfigError(f"cadence must be >= 1, got {self.cadence}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.kind == "buy_and_hold":
            if self.asset is None or not 0 <= self.asset < assets:
                raise ConfigError(f"buy_and_hold needs an asset index in [0, {assets})")
        elif not 1 <= self.risk_level <= z_levels:
            raise ConfigError(f"risk level {self.risk_level} outside [1, {z_levels}]")


class PerformanceReport(BaseModel):
    """Summary statistics of one backtest ledger."""

    strategy: str
    risk_level: Optional[int] = None
    final_value: float
    annual_return: float
    monthly_return: float
    annual_volatility: float
    sharpe: Optional[float] = None
    mean_weights: List[float]


# ---------------------------------------------------------------------------
# Array records
# ---------------------------------------------------------------------------


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PriceTable:
    """Asset x trading-day matrix of adjusted close prices."""

    tickers: Tuple[str, ...]
    dates: Tuple[date, ...]
    prices: np.ndarray

    def __post_init__(self):
        prices = _readonly(self.prices)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "dates", tuple(self.dates))

        if prices.ndim != 2 or prices.shape != (len(self.tickers), len(self.dates)):
            raise DataError(
                f"Price matrix shape {prices.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("Duplicate tickers")
        for i in range(1, len(self.dates)):
            if self.dates[i] <= self.dates[i - 1]:
                raise DataError(
                    f"Dates not strictly increasing: {self.dates[i - 1]} then {self.dates[i]}",
                    row=i,
                )
        bad = np.argwhere(~np.isfinite(prices) | (prices <= 0))
        if bad.size:
            asset, day = bad[0]
            raise DataError(
                f"Price {prices[asset, day]!r} on {self.dates[day]} is not a positive number",
                row=int(day),
                ticker=self.tickers[asset],
            )

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def slice_days(self, start: int, stop: int) -> "PriceTable":
        return PriceTable(self.tickers, self.dates[start:stop], self.prices[:, start:stop])

    def index_on_or_after(self, day: date) -> int:
        """Index of the first trading day >= day (n_days if none)."""
        for i, d in enumerate(self.dates):
            if d >= day:
                return i
        return self.n_days


@dataclass(frozen=True)
class RawWindow:
    """W + 1 raw prices per asset; index 0 is the extra leading day."""

    prices: np.ndarray
    start: int
    wb: int
    wf: int
    tickers: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prices", _readonly(self.prices))
        if self.prices.shape[1] != self.wb + self.wf + 1:
            raise DataError(
                f"Raw window has {self.prices.shape[1]} days, expected {self.wb + self.wf + 1}"
            )

    @property
    def anchor_index(self) -> int:
        """Table index of the last backward day."""
        return self.start + self.wb


@dataclass(frozen=True)
class MarketWindow:
    """One normalized window."""

    backward: np.ndarray
    forward: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    analysis: np.ndarray
    anchor_normalized: np.ndarray
    anchor_raw: np.ndarray
    degenerate: np.ndarray
    anchor_index: int = 0
    tickers: Tuple[str, ...] = ()

    @property
    def n_assets(self) -> int:
        return self.backward.shape[0]

    @property
    def is_degenerate(self) -> bool:
        return bool(np.any(self.degenerate))

    def full(self) -> np.ndarray:
        """Backward and forward variations concatenated along time."""
        return np.concatenate([self.backward, self.forward], axis=1)


@dataclass(frozen=True)
class ScenarioSet:
    """n forward price paths sharing one anchor."""

    anchor: np.ndarray
    paths: np.ndarray
    source: Literal["gan", "historical"] = "gan"
    tickers: Tuple[str, ...] = ()
    variations: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "anchor", _readonly(self.anchor))
        object.__setattr__(self, "paths", _readonly(self.paths))
        if self.paths.ndim != 3 or self.paths.shape[1] != self.anchor.shape[0]:
            raise DataError(
                f"Scenario paths {self.paths.shape} do not match {self.anchor.shape[0]} assets"
            )

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> int:
        return self.paths.shape[2]


@dataclass(frozen=True)
class ReturnsSample:
    """n x A terminal returns e / s."""

    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "returns", _readonly(self.returns))

    @property
    def n(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class Diversification:
    """Capital weights on the simplex."""

    weights: np.ndarray

    def __post_init__(self):
        weights = _readonly(self.weights)
        object.__setattr__(self, "weights", weights)
        if weights.ndim != 1 or weights.size == 0:
            raise ContractError(f"Weights must be a non-empty vector, got shape {weights.shape}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise ContractError(f"Weights {weights} are not on the simplex")


@dataclass(frozen=True)
class ParetoPoint:
    diversification: Diversification
    expected_return: float
    variance: float


@dataclass(frozen=True)
class ParetoSet:
    points: Tuple[ParetoPoint, ...]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RiskGrid:
    targets: np.ndarray
    r_max: float

    def __post_init__(self):
        object.__setattr__(self, "targets", _readonly(self.targets))

    @property
    def levels(self) -> int:
        return self.targets.shape[0]


@dataclass(frozen=True)
class MarkowitzModel:
    """Mean and covariance of horizon-length returns."""

    mean: np.ndarray
    cov: np.ndarray
    r_max: float
    horizon: int
    n_blocks: int

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "cov", _readonly(self.cov))


@dataclass
class BacktestLedger:
    """Daily values of one strategy over the test period."""

    strategy: str
    dates: List[date]
    values: np.ndarray
    realized_returns: np.ndarray
    weights: np.ndarray
    conditioning_end: List[date]
    tickers: Tuple[str, ...] = ()
    risk_level: Optional[int] = None


@dataclass
class Checkpoint:
    """Trained (or initial) networks plus optimizer and normalization state."""

    hp: GanHyperParams
    tickers: Tuple[str, ...]
    arrays: Dict[str, np.ndarray]
    seed: int
    step: int
    format_version: int = CHECKPOINT_FORMAT_VERSION
    extra: Dict[str, str] = field(default_factory=dict)
