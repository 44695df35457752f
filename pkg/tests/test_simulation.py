import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.exceptions import ContractError, DataError
from app.db.models import ReturnsSample, ScenarioSet
from app.services.simulation import (
    ScenarioObjective,
    estimate_objectives,
    historical_scenarios,
    portfolio_return,
    scenario_returns,
)
from conftest import make_table


def scenarios(paths, anchor):
    return ScenarioSet(anchor=np.asarray(anchor, dtype=float), paths=np.asarray(paths, dtype=float))


def test_terminal_return_over_anchor():
    sample = scenario_returns(scenarios([[[105.0, 110.0]]], [100.0]))
    assert sample.returns[0, 0] == pytest.approx(1.1)


def test_flat_path_breaks_even():
    sample = scenario_returns(scenarios(np.full((2, 1, 3), 50.0), [50.0]))
    np.testing.assert_array_equal(sample.returns, np.ones((2, 1)))


def test_returns_match_elementwise_division(rng):
    paths = rng.uniform(50.0, 150.0, size=(3, 2, 4))
    anchor = np.array([100.0, 80.0])
    sample = scenario_returns(scenarios(paths, anchor))
    np.testing.assert_allclose(sample.returns, paths[:, :, -1] / anchor)


def test_intermediate_horizon(rng):
    paths = rng.uniform(50.0, 150.0, size=(3, 2, 4))
    sample = scenario_returns(scenarios(paths, [100.0, 100.0]), horizon=2)
    np.testing.assert_allclose(sample.returns, paths[:, :, 1] / 100.0)
    with pytest.raises(ContractError):
        scenario_returns(scenarios(paths, [100.0, 100.0]), horizon=5)


def test_non_positive_price_is_data_error():
    with pytest.raises(DataError):
        scenario_returns(scenarios([[[100.0, 0.0]], [[100.0, 90.0]]], [100.0]))


def test_portfolio_return_examples():
    assert portfolio_return(np.array([0.5, 0.5]), np.array([1.1, 0.9])) == pytest.approx(1.0)
    assert portfolio_return(np.array([0.0, 1.0, 0.0]), np.array([1.1, 0.7, 1.3])) == 0.7
    with pytest.raises(ContractError):
        portfolio_return(np.array([0.6, 0.6]), np.array([1.0, 1.0]))
    with pytest.raises(ContractError):
        portfolio_return(np.array([1.5, -0.5]), np.array([1.0, 1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8), st.integers(0, 1000))
def test_portfolio_return_matches_sum(raw, seed):
    weights = np.array(raw) + 1e-3
    weights /= weights.sum()
    returns = np.random.default_rng(seed).uniform(0.5, 1.5, size=weights.size)
    expected = sum(w * r for w, r in zip(weights, returns))
    assert portfolio_return(weights, returns) == pytest.approx(expected, rel=1e-12)


def test_identical_scenarios_have_zero_variance():
    sample = ReturnsSample(np.tile([1.1, 0.9], (5, 1)))
    mean, var = estimate_objectives(np.array([0.3, 0.7]), sample)
    assert mean == pytest.approx(0.96)
    assert var == pytest.approx(0.0, abs=1e-20)


def test_unbiased_variance_hand_example():
    sample = ReturnsSample(np.array([[1.0], [1.2]]))
    mean, var = estimate_objectives(np.array([1.0]), sample)
    assert mean == pytest.approx(1.1)
    assert var == pytest.approx(0.02)


def test_single_scenario_is_contract_error():
    with pytest.raises(ContractError):
        estimate_objectives(np.array([1.0]), ReturnsSample(np.array([[1.0]])))
    with pytest.raises(ContractError):
        ScenarioObjective(ReturnsSample(np.array([[1.0]])))


def test_vertex_linearity_and_shift(rng):
    returns = rng.uniform(0.8, 1.2, size=(40, 3))
    sample = ReturnsSample(returns)
    for i in range(3):
        mean, var = estimate_objectives(np.eye(3)[i], sample)
        assert mean == pytest.approx(returns[:, i].mean())
        assert var == pytest.approx(returns[:, i].var(ddof=1))

    x, y = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.0, 0.4])
    mixed = estimate_objectives(0.25 * x + 0.75 * y, sample)[0]
    expected = 0.25 * estimate_objectives(x, sample)[0] + 0.75 * estimate_objectives(y, sample)[0]
    assert mixed == pytest.approx(expected)

    shifted = ReturnsSample(returns + 0.5)
    base_mean, base_var = estimate_objectives(x, sample)
    mean, var = estimate_objectives(x, shifted)
    assert mean == pytest.approx(base_mean + 0.5)
    assert var == pytest.approx(base_var)


def test_batch_evaluation_matches_single(rng):
    objective = ScenarioObjective(ReturnsSample(rng.uniform(0.8, 1.2, size=(30, 4))))
    population = rng.dirichlet(np.ones(4), size=6)
    batch = objective.evaluate_many(population)
    for row, weights in zip(batch, population):
        np.testing.assert_allclose(row, objective(weights), rtol=1e-12)
    assert objective.assets == 4


def test_historical_scenarios_rescale_past_blocks():
    prices = np.arange(1.0, 12.0)
    table = make_table(prices)
    hist = historical_scenarios(table, end_index=10, wf=5)
    assert hist.source == "historical"
    assert hist.paths.shape == (2, 1, 5)
    np.testing.assert_allclose(hist.anchor, [11.0])
    # Block days 1..5 relative to day 0, rescaled to the anchor
    np.testing.assert_allclose(hist.paths[0, 0], 11.0 * prices[1:6] / prices[0])
    with pytest.raises(DataError):
        historical_scenarios(table, end_index=8, wf=5)
