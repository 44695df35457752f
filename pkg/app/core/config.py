import io
import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigError
from app.db.models import GanHyperParams, NsgaParams, StrategySpec, SynthConfig

load_dotenv()


class Settings(BaseModel):
    # Output directory override (takes precedence over the run config)
    PAGAN_OUTPUT_DIR: str = os.getenv("PAGAN_OUTPUT_DIR", "")

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv(
        "LOG_FORMAT", "%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    # Thread pool size for independent backtests and scenario batches (1 = sequential)
    MAX_WORKERS: int = int(os.getenv("MAX_WORKERS", "1"))


settings = Settings()


STRATEGY_KINDS = ("pagan", "markowitz", "default", "buy_and_hold")

_LIST_FIELDS = (
    "synth_drift",
    "synth_volatility",
    "synth_correlation",
    "risk_settings",
    "strategies",
    "seeds",
)


class RunConfig(BaseModel):
    """
    Flat key=value run configuration.

    Every key has a default except the data source: either ``csv`` or
    ``synth_assets`` must be given.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Data source
    csv: Optional[str] = None
    synth_assets: Optional[int] = None
    synth_days: int = 1500
    synth_drift: List[float] = []
    synth_volatility: List[float] = []
    synth_correlation: List[float] = []
    synth_seed: int = 0
    synth_start: date = date(2010, 1, 4)

    # Train/test split; without a split date the last test_days days are the test period
    split_date: Optional[date] = None
    test_days: int = 60

    # Windows
    wb: int = 40
    wf: int = 20
    stride: int = 1

    # GAN
    latent_factor: int = 2
    training_steps: int = 15000
    batch_size: int = 32
    n_critic: int = 5
    gp_weight: float = 10.0
    learning_rate: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    leaky_slope: float = 0.2
    log_every: int = 100
    checkpoint_every: int = 1000
    collapse_threshold: float = 1e-4

    # Scenarios and optimization
    z_levels: int = 25
    n_scenarios: int = 250
    population: int = 100
    generations: int = 200
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0
    crossover_prob: float = 0.9

    # Backtest
    cadence: int = 1
    horizon: int = 20
    risk_settings: List[int] = [5, 13, 21]
    strategies: List[str] = ["pagan", "markowitz", "default"]
    seeds: List[int] = [0]

    output_dir: str = "output"

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def _split_lists(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("csv", "split_date", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if (self.csv is None) == (self.synth_assets is None):
            raise ValueError("exactly one data source is required: csv=PATH or synth_assets=N")
        if self.synth_assets is not None:
            if self.synth_assets < 1 or self.synth_days < 2:
                raise ValueError("synth_assets must be >= 1 and synth_days >= 2")
            for name in ("synth_drift", "synth_volatility"):
                if len(getattr(self, name)) not in (0, 1, self.synth_assets):
                    raise ValueError(f"{name} needs 1 or {self.synth_assets} values")
            if len(self.synth_correlation) not in (0, 1, self.synth_assets**2):
                raise ValueError(
                    f"synth_correlation needs 1 value or {self.synth_assets ** 2} "
                    f"row-major matrix entries"
                )
        if not 1 <= self.horizon <= self.wf:
            raise ValueError(f"horizon must lie in [1, wf={self.wf}]")
        if self.z_levels < 2:
            raise ValueError("z_levels must be >= 2")
        for level in self.risk_settings:
            if not 1 <= level <= self.z_levels:
                raise ValueError(f"risk setting {level} outside [1, {self.z_levels}]")
        for kind in self.strategies:
            if kind not in STRATEGY_KINDS:
                raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGY_KINDS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.cadence < 1 or self.stride < 1 or self.test_days < 1:
            raise ValueError("cadence, stride and test_days must be >= 1")
        if self.n_scenarios < 2:
            raise ValueError("n_scenarios must be >= 2")
        return self

    # -- parsing -------------------------------------------------------------

    @classmethod
    def from_mapping(cls, values: Dict[str, Optional[str]]) -> "RunConfig":
        cleaned = {key: value for key, value in values.items() if value is not None}
        try:
            return cls(**cleaned)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from exc

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls.from_mapping(dotenv_values(stream=io.StringIO(text), interpolate=False))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        return cls.from_mapping(dotenv_values(path, interpolate=False))

    def to_text(self) -> str:
        lines = []
        for key in sorted(type(self).model_fields):
            value = getattr(self, key)
            if value is None:
                continue
            lines.append(f"{key}={_format_value(value)}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        values = self.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return type(self)(**values)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from exc

    def with_source(self, csv: Optional[str] = None, synth_assets: Optional[int] = None) -> "RunConfig":
        """Replace the data source; at most one of the two may be given."""
        if csv is None and synth_assets is None:
            return self
        if csv is not None and synth_assets is not None:
            raise ConfigError("choose either a CSV file or a synthetic market, not both")
        values = self.model_dump()
        values.update(csv=csv, synth_assets=synth_assets)
        try:
            return type(self)(**values)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from exc

    # -- derived records -----------------------------------------------------

    def resolve_output_dir(self, cli_value: Optional[str] = None) -> Path:
        """CLI flag, then PAGAN_OUTPUT_DIR, then the config's output_dir."""
        return Path(cli_value or settings.PAGAN_OUTPUT_DIR or self.output_dir)

    def gan_hyperparams(self, assets: int) -> GanHyperParams:
        hp = GanHyperParams(
            assets=assets,
            wb=self.wb,
            wf=self.wf,
            latent_factor=self.latent_factor,
            training_steps=self.training_steps,
            batch_size=self.batch_size,
            n_critic=self.n_critic,
            gp_weight=self.gp_weight,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            leaky_slope=self.leaky_slope,
            log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
            collapse_threshold=self.collapse_threshold,
        )
        hp.check()
        return hp

    def nsga_params(self) -> NsgaParams:
        params = NsgaParams(
            population=self.population,
            generations=self.generations,
            sbx_eta=self.sbx_eta,
            mutation_eta=self.mutation_eta,
            crossover_prob=self.crossover_prob,
        )
        params.check()
        return params

    def synth_config(self) -> SynthConfig:
        if self.synth_assets is None:
            raise ConfigError("synth_config requested but no synth_assets key is set")
        n = self.synth_assets
        drift = _per_asset(self.synth_drift, n, 0.0003)
        volatility = _per_asset(self.synth_volatility, n, 0.01)
        if len(self.synth_correlation) == n * n:
            correlation = np.array(self.synth_correlation).reshape(n, n)
        else:
            rho = self.synth_correlation[0] if self.synth_correlation else 0.0
            correlation = np.full((n, n), rho)
            np.fill_diagonal(correlation, 1.0)
        return SynthConfig(
            assets=n,
            days=self.synth_days,
            drift=drift,
            volatility=volatility,
            correlation=correlation.tolist(),
            seed=self.synth_seed,
            start_date=self.synth_start,
        )

    def strategy_specs(self, assets: int) -> List[StrategySpec]:
        specs = []
        for kind in self.strategies:
            if kind == "buy_and_hold":
                specs.extend(
                    StrategySpec(kind=kind, horizon=self.horizon, asset=i) for i in range(assets)
                )
                continue
            for level in self.risk_settings:
                specs.append(
                    StrategySpec(
                        kind=kind, risk_level=level, horizon=self.horizon, cadence=self.cadence
                    )
                )
        for spec in specs:
            spec.check(self.z_levels, assets)
        return specs


def _per_asset(values: List[float], n: int, default: float) -> List[float]:
    if not values:
        return [default] * n
    if len(values) == 1:
        return [values[0]] * n
    return list(values)


def _format_value(value: Any) -> str:
    if isinstance(value, list):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def _describe(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(p) for p in error["loc"]) or "config"
        if error["type"] == "extra_forbidden":
            parts.append(f"unknown key {location!r}")
        else:
            parts.append(f"{location}: {error['msg']}")
    return "Invalid run config: " + "; ".join(parts)
