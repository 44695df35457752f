"""
Scenario returns and scenario-based portfolio objectives.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from app.core.exceptions import ContractError, DataError
from app.db.models import SIMPLEX_TOL, PriceTable, ReturnsSample, ScenarioSet

logger = logging.getLogger(__name__)


def scenario_returns(scenarios: ScenarioSet, horizon: Optional[int] = None) -> ReturnsSample:
    """
    Terminal returns e / s, with s the shared anchor price.

    ``horizon`` (1..Wf) takes e from that day instead of the last one.
    """
    length = scenarios.horizon
    if length < 1:
        raise ContractError("scenarios need at least one forward day")
    day = length if horizon is None else horizon
    if not 1 <= day <= length:
        raise ContractError(f"horizon {horizon} outside [1, {length}]")
    if np.any(scenarios.anchor <= 0):
        raise DataError("anchor prices must be positive")
    terminal = scenarios.paths[:, :, day - 1]
    if np.any(terminal <= 0):
        scenario, asset = np.argwhere(terminal <= 0)[0]
        ticker = scenarios.tickers[asset] if scenarios.tickers else None
        raise DataError(
            f"scenario {scenario} ends at non-positive price {terminal[scenario, asset]!r}",
            ticker=ticker,
        )
    return ReturnsSample(terminal / scenarios.anchor[None, :])


def check_simplex(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or np.any(weights < -SIMPLEX_TOL) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
        raise ContractError(f"weights {weights} are not on the simplex")
    return weights


def portfolio_return(weights: np.ndarray, returns: np.ndarray) -> float:
    """x . r for x on the simplex."""
    weights = check_simplex(weights)
    returns = np.asarray(returns, dtype=np.float64)
    if returns.shape != weights.shape:
        raise ContractError(f"return vector {returns.shape} does not match weights {weights.shape}")
    return float(weights @ returns)


def estimate_objectives(weights: np.ndarray, sample: ReturnsSample) -> Tuple[float, float]:
    """Sample mean and unbiased variance of the portfolio return over the scenarios."""
    if sample.n < 2:
        raise ContractError(f"need at least 2 scenarios, got {sample.n}")
    weights = check_simplex(weights)
    if sample.returns.shape[1] != weights.shape[0]:
        raise ContractError(
            f"sample has {sample.returns.shape[1]} assets, weights have {weights.shape[0]}"
        )
    values = sample.returns @ weights
    return float(values.mean()), float(values.var(ddof=1))


class ScenarioObjective:
    """x -> (expected return, variance) over a fixed returns sample."""

    def __init__(self, sample: ReturnsSample):
        if sample.n < 2:
            raise ContractError(f"need at least 2 scenarios, got {sample.n}")
        self.sample = sample

    @property
    def assets(self) -> int:
        return self.sample.returns.shape[1]

    def __call__(self, weights: np.ndarray) -> Tuple[float, float]:
        return estimate_objectives(weights, self.sample)

    def evaluate_many(self, population: np.ndarray) -> np.ndarray:
        """Objectives of every row of an m x A population as an m x 2 array."""
        population = np.asarray(population, dtype=np.float64)
        values = self.sample.returns @ population.T  # n x m
        return np.column_stack([values.mean(axis=0), values.var(axis=0, ddof=1)])


def historical_scenarios(table: PriceTable, end_index: int, wf: int) -> ScenarioSet:
    """
    Every past non-overlapping wf-day block ending by ``end_index``, rescaled
    so each path starts from the price on ``end_index``.
    """
    if wf < 1:
        raise ContractError("wf must be >= 1")
    blocks = end_index // wf
    if blocks < 2:
        raise DataError(
            f"need at least {2 * wf + 1} days up to day {end_index} for historical scenarios"
        )
    anchor = table.prices[:, end_index]
    paths = []
    for b in range(blocks):
        stop = end_index - b * wf
        start = stop - wf
        relative = table.prices[:, start + 1 : stop + 1] / table.prices[:, start : start + 1]
        paths.append(anchor[:, None] * relative)
    return ScenarioSet(
        anchor=anchor,
        paths=np.stack(paths[::-1]),
        source="historical",
        tickers=table.tickers,
    )
