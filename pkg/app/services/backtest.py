"""
Rolling backtest of diversification strategies with daily rebalancing.

Weights decided on test day k use prices up to day k only and are
realized over the move from day k to day k + 1.
"""

import logging
import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigError, ContractError, DataError, LookAheadError, UndefinedMetricError
from app.db.models import (
    BacktestLedger,
    Diversification,
    MarkowitzModel,
    NsgaParams,
    PerformanceReport,
    PriceTable,
    RiskGrid,
    StrategySpec,
)
from app.services.market_data import conditioning_window
from app.services.portfolio_opt import default_random, nsga2_optimize, select_indices
from app.services.scenario_gan import ScenarioGenerator
from app.services.simulation import ScenarioObjective, scenario_returns

logger = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252
TRADING_DAYS_PER_MONTH = 21
ZERO_VOLATILITY = 1e-12


def decision_seed(seed: int, day_index: int) -> int:
    """Seed for the decision taken on a given table day."""
    return int(np.random.SeedSequence([seed, day_index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Allocators
# ---------------------------------------------------------------------------


class Allocator(ABC):
    """Chooses target weights on a trading day."""

    @abstractmethod
    def decide(self, table: PriceTable, index: int) -> Tuple[np.ndarray, int]:
        """Return (weights, index of the last day the decision used)."""


class FixedAllocator(Allocator):
    def __init__(self, weights: np.ndarray):
        self.weights = Diversification(weights).weights

    def decide(self, table: PriceTable, index: int) -> Tuple[np.ndarray, int]:
        return self.weights, index


class BuyAndHoldAllocator(FixedAllocator):
    def __init__(self, asset: int, n_assets: int):
        super().__init__(np.eye(n_assets)[asset])


class MarkowitzAllocator(Allocator):
    """Frontier weights from the training-period model; identical every day."""

    def __init__(self, frontier: Sequence[Diversification], risk_level: int, train_end: int):
        self.weights = frontier[risk_level - 1].weights
        self.train_end = train_end

    def decide(self, table: PriceTable, index: int) -> Tuple[np.ndarray, int]:
        return self.weights, min(self.train_end, index)


class DefaultAllocator(Allocator):
    """Fresh random diversifications every decision day, ordered by risk."""

    def __init__(self, model: MarkowitzModel, z_levels: int, risk_level: int, seed: int):
        self.model = model
        self.z_levels = z_levels
        self.risk_level = risk_level
        self.seed = seed

    def decide(self, table: PriceTable, index: int) -> Tuple[np.ndarray, int]:
        draws = default_random(self.z_levels, self.model, decision_seed(self.seed, index))
        return draws[self.risk_level - 1].weights, index


class PaganDecider:
    """
    Scenario-based decisions for every risk level at once.

    One scenario set and one NSGA-II run per decision day serve all risk
    levels; results are cached per day and safe to request from threads.
    """

    def __init__(
        self,
        generator: ScenarioGenerator,
        grid: RiskGrid,
        nsga: NsgaParams,
        n_scenarios: int = 250,
        horizon: Optional[int] = None,
        seed: int = 0,
    ):
        self.generator = generator
        self.grid = grid
        self.nsga = nsga
        self.n_scenarios = n_scenarios
        self.horizon = horizon
        self.seed = seed
        self._cache: Dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self._day_locks: Dict[int, threading.Lock] = {}

    @property
    def wb(self) -> int:
        return self.generator.generator.hp.wb

    def selections(self, table: PriceTable, index: int) -> np.ndarray:
        """Z x A weights chosen on day ``index``."""
        with self._lock:
            if index in self._cache:
                return self._cache[index]
            day_lock = self._day_locks.setdefault(index, threading.Lock())
        with day_lock:
            with self._lock:
                if index in self._cache:
                    return self._cache[index]
            weights = self._optimize(table, index)
            with self._lock:
                self._cache[index] = weights
        return weights

    def _optimize(self, table: PriceTable, index: int) -> np.ndarray:
        seed = decision_seed(self.seed, index)
        window = conditioning_window(table, index, self.wb)
        scenarios = self.generator.sample(window, self.n_scenarios, seed)
        sample = scenario_returns(scenarios, self.horizon)
        pareto = nsga2_optimize(ScenarioObjective(sample), table.n_assets, self.nsga, seed)
        chosen = select_indices(pareto, self.grid.targets)
        logger.debug(f"{table.dates[index]}: front of {len(pareto)} points")
        return np.stack([pareto.points[i].diversification.weights for i in chosen])


class PaganAllocator(Allocator):
    def __init__(self, decider: PaganDecider, risk_level: int):
        self.decider = decider
        self.risk_level = risk_level

    def decide(self, table: PriceTable, index: int) -> Tuple[np.ndarray, int]:
        return self.decider.selections(table, index)[self.risk_level - 1], index


@dataclass
class BacktestDeps:
    """Everything the strategies need besides the prices."""

    model: MarkowitzModel
    grid: RiskGrid
    frontier: Optional[List[Diversification]] = None
    pagan: Optional[PaganDecider] = None


def make_allocator(spec: StrategySpec, deps: BacktestDeps, seed: int, n_assets: int, train_end: int) -> Allocator:
    spec.check(deps.grid.levels, n_assets)
    if spec.kind == "buy_and_hold":
        return BuyAndHoldAllocator(spec.asset, n_assets)
    if spec.kind == "markowitz":
        if deps.frontier is None:
            raise ConfigError("markowitz strategy needs a computed frontier")
        return MarkowitzAllocator(deps.frontier, spec.risk_level, train_end)
    if spec.kind == "default":
        return DefaultAllocator(deps.model, deps.grid.levels, spec.risk_level, seed)
    if deps.pagan is None:
        raise ConfigError("pagan strategy needs a trained scenario generator")
    return PaganAllocator(deps.pagan, spec.risk_level)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


def simulate_ledger(
    table: PriceTable,
    allocator: Allocator,
    test_start: int,
    cadence: int = 1,
    name: str = "strategy",
    risk_level: Optional[int] = None,
) -> BacktestLedger:
    """
    value[0] = 1; value[k] = value[k-1] * sum_i x[k-1, i] * p_i(k) / p_i(k-1).

    Weights are re-decided every ``cadence`` days and held at target in between.
    """
    if cadence < 1:
        raise ConfigError(f"cadence must be >= 1, got {cadence}")
    if not 0 <= test_start < table.n_days - 1:
        raise DataError(f"Test period starting at day {test_start} has fewer than 2 days")
    days = range(test_start, table.n_days)
    m = len(days)
    values = np.ones(m)
    realized = np.zeros(m)
    weights = np.zeros((m, table.n_assets))
    conditioning_end = []

    current: Optional[np.ndarray] = None
    decided_on = test_start
    for k, index in enumerate(days):
        if k > 0:
            ratio = table.prices[:, index] / table.prices[:, index - 1]
            growth = float(current @ ratio)
            values[k] = values[k - 1] * growth
            realized[k] = growth - 1.0
        if k < m - 1 and k % cadence == 0:
            current, decided_on = allocator.decide(table, index)
            current = Diversification(current).weights
            if table.dates[decided_on] >= table.dates[index + 1]:
                raise LookAheadError(
                    f"{name}: weights realized on {table.dates[index + 1]} were computed "
                    f"from data up to {table.dates[decided_on]}"
                )
        weights[k] = current
        conditioning_end.append(table.dates[decided_on])

    return BacktestLedger(
        strategy=name,
        dates=[table.dates[i] for i in days],
        values=values,
        realized_returns=realized,
        weights=weights,
        conditioning_end=conditioning_end,
        tickers=table.tickers,
        risk_level=risk_level,
    )


def run_backtest(
    prices: PriceTable,
    spec: StrategySpec,
    deps: BacktestDeps,
    seed: int,
    test_start: int,
) -> BacktestLedger:
    """Backtest one strategy over days test_start .. end of ``prices``."""
    if spec.kind == "pagan" and deps.pagan is not None and test_start < deps.pagan.wb:
        raise DataError(
            f"Test period starts at day {test_start}; the conditioning window needs "
            f"{deps.pagan.wb} earlier days"
        )
    allocator = make_allocator(spec, deps, seed, prices.n_assets, train_end=max(test_start - 1, 0))
    risk_level = None if spec.kind == "buy_and_hold" else spec.risk_level
    ledger = simulate_ledger(prices, allocator, test_start, spec.cadence, spec.label, risk_level)
    logger.info(
        f"Backtest {spec.label}: {len(ledger.dates)} days, final value {ledger.values[-1]:.4f}"
    )
    return ledger


def check_ledger(ledger: BacktestLedger, table: PriceTable, test_start: int, tol: float = 0.0) -> None:
    """Re-derive every value from weights and prices; raise ContractError on mismatch."""
    for k in range(1, len(ledger.dates)):
        index = test_start + k
        growth = float(ledger.weights[k - 1] @ (table.prices[:, index] / table.prices[:, index - 1]))
        expected = ledger.values[k - 1] * growth
        if abs(expected - ledger.values[k]) > tol:
            raise ContractError(f"value recursion broken on {ledger.dates[k]}")
        if ledger.conditioning_end[k - 1] >= ledger.dates[k]:
            raise LookAheadError(f"decision for {ledger.dates[k]} used data up to {ledger.conditioning_end[k - 1]}")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def daily_returns(ledger: BacktestLedger) -> np.ndarray:
    return np.asarray(ledger.realized_returns[1:], dtype=np.float64)


def sharpe_from_returns(returns: np.ndarray) -> float:
    """Annualized mean daily return over annualized volatility; risk-free rate 0."""
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size < 2:
        raise UndefinedMetricError(f"Sharpe ratio needs at least 2 daily returns, got {returns.size}")
    volatility = float(returns.std(ddof=1))
    mean = float(returns.mean())
    if volatility <= ZERO_VOLATILITY * max(1.0, abs(mean)):
        raise UndefinedMetricError("Sharpe ratio is undefined for zero volatility")
    return (mean * TRADING_DAYS_PER_YEAR) / (volatility * math.sqrt(TRADING_DAYS_PER_YEAR))


def sharpe_ratio(ledger: BacktestLedger) -> float:
    return sharpe_from_returns(daily_returns(ledger))


def performance_report(ledger: BacktestLedger) -> PerformanceReport:
    returns = daily_returns(ledger)
    mean = float(returns.mean()) if returns.size else 0.0
    volatility = float(returns.std(ddof=1)) if returns.size > 1 else 0.0
    try:
        sharpe: Optional[float] = sharpe_from_returns(returns)
    except UndefinedMetricError:
        sharpe = None
    held = ledger.weights[:-1] if len(ledger.weights) > 1 else ledger.weights
    return PerformanceReport(
        strategy=ledger.strategy,
        risk_level=ledger.risk_level,
        final_value=float(ledger.values[-1]),
        annual_return=mean * TRADING_DAYS_PER_YEAR,
        monthly_return=mean * TRADING_DAYS_PER_MONTH,
        annual_volatility=volatility * math.sqrt(TRADING_DAYS_PER_YEAR),
        sharpe=sharpe,
        mean_weights=held.mean(axis=0).tolist(),
    )


def dominates(ret_a: float, vol_a: float, ret_b: float, vol_b: float) -> bool:
    """a is better on one metric (higher return or lower volatility) and not worse on the other."""
    return (vol_a <= vol_b and ret_a > ret_b) or (vol_a < vol_b and ret_a >= ret_b)


def dominance_metrics(
    pagan: Sequence[Tuple[float, float]],
    markowitz: Sequence[Tuple[float, float]],
) -> Tuple[float, float]:
    """
    Percentages of risk levels where each side dominates the other.

    Args:
        pagan: (return, volatility) per risk level
        markowitz: (return, volatility) per risk level

    Returns:
        (PAGAN2M %, M2PAGAN %)
    """
    if len(pagan) != len(markowitz):
        raise ContractError(f"{len(pagan)} levels against {len(markowitz)}")
    if not pagan:
        raise ContractError("dominance needs at least one risk level")
    p_wins = sum(dominates(rp, vp, rm, vm) for (rp, vp), (rm, vm) in zip(pagan, markowitz))
    m_wins = sum(dominates(rm, vm, rp, vp) for (rp, vp), (rm, vm) in zip(pagan, markowitz))
    levels = len(pagan)
    return 100.0 * p_wins / levels, 100.0 * m_wins / levels
