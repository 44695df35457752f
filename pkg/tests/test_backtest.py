import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.exceptions import ConfigError, ContractError, LookAheadError, UndefinedMetricError
from app.db.models import NsgaParams, StrategySpec
from app.services.backtest import (
    Allocator,
    BacktestDeps,
    BuyAndHoldAllocator,
    FixedAllocator,
    PaganDecider,
    check_ledger,
    dominance_metrics,
    dominates,
    make_allocator,
    performance_report,
    run_backtest,
    sharpe_from_returns,
    sharpe_ratio,
    simulate_ledger,
)
from app.services.portfolio_opt import markowitz_estimate, markowitz_frontier, risk_grid
from app.services.scenario_gan import ScenarioGenerator, build_networks
from conftest import make_table, tiny_hyperparams


def test_single_asset_buy_and_hold_tracks_price():
    prices = np.array([10.0, 11.0, 9.0, 12.0, 12.5])
    table = make_table(prices)
    ledger = simulate_ledger(table, BuyAndHoldAllocator(0, 1), test_start=0)
    np.testing.assert_allclose(ledger.values, prices / prices[0])
    assert ledger.values[0] == 1.0


def test_constant_prices_keep_value():
    table = make_table(np.full((2, 6), 40.0))
    ledger = simulate_ledger(table, FixedAllocator(np.array([0.3, 0.7])), test_start=1)
    np.testing.assert_array_equal(ledger.values, np.ones(5))
    report = performance_report(ledger)
    assert report.final_value == 1.0
    assert report.annual_volatility == 0.0
    assert report.sharpe is None


def test_hand_two_asset_ledger():
    table = make_table([[10.0, 11.0, 12.1], [20.0, 18.0, 19.8]])
    ledger = simulate_ledger(table, FixedAllocator(np.array([0.5, 0.5])), test_start=0)
    np.testing.assert_allclose(ledger.values, [1.0, 1.0, 1.1])
    np.testing.assert_allclose(ledger.realized_returns, [0.0, 0.0, 0.1], atol=1e-15)
    check_ledger(ledger, table, 0)


def test_uniform_weights_on_identical_paths_equal_buy_and_hold():
    path = np.array([5.0, 5.5, 5.2, 6.0, 5.9])
    table = make_table(np.stack([path, path]))
    uniform = simulate_ledger(table, FixedAllocator(np.array([0.5, 0.5])), 0)
    single = simulate_ledger(table, BuyAndHoldAllocator(0, 2), 0)
    np.testing.assert_allclose(uniform.values, single.values, rtol=1e-14)


class PeekingAllocator(Allocator):
    def decide(self, table, index):
        return np.array([1.0]), index + 1


def test_look_ahead_is_rejected():
    table = make_table(np.arange(1.0, 6.0))
    with pytest.raises(LookAheadError):
        simulate_ledger(table, PeekingAllocator(), 0)


def test_tampered_ledger_fails_check():
    table = make_table(np.arange(1.0, 6.0))
    ledger = simulate_ledger(table, BuyAndHoldAllocator(0, 1), 0)
    ledger.values[3] += 1e-6
    with pytest.raises(ContractError):
        check_ledger(ledger, table, 0)


def test_cadence_holds_target_weights():
    calls = []

    class Counting(Allocator):
        def decide(self, table, index):
            calls.append(index)
            return np.array([0.5, 0.5]), index

    table = make_table(np.ones((2, 8)) + np.arange(8.0))
    ledger = simulate_ledger(table, Counting(), 0, cadence=3)
    assert calls == [0, 3, 6]
    assert ledger.conditioning_end[4] == table.dates[3]
    with pytest.raises(ConfigError):
        simulate_ledger(table, Counting(), 0, cadence=0)


def test_sharpe_examples():
    with pytest.raises(UndefinedMetricError):
        sharpe_from_returns(np.full(5, 0.01))
    assert sharpe_from_returns(np.array([0.01, -0.01, 0.01, -0.01])) == 0.0
    expected = math.sqrt(252) * 0.01 / math.sqrt(0.0002)
    assert sharpe_from_returns(np.array([0.01, 0.02, -0.01, 0.02])) == pytest.approx(expected)
    with pytest.raises(UndefinedMetricError):
        sharpe_from_returns(np.array([0.01]))


def test_sharpe_of_ledger():
    table = make_table([100.0, 101.0, 102.01, 100.9899, 103.009698])
    ledger = simulate_ledger(table, BuyAndHoldAllocator(0, 1), 0)
    returns = np.array([0.01, 0.01, -0.01, 0.02])
    assert sharpe_ratio(ledger) == pytest.approx(sharpe_from_returns(returns), rel=1e-6)


def test_dominance_examples():
    same = [(0.05, 0.1), (0.07, 0.2)]
    assert dominance_metrics(same, same) == (0.0, 0.0)
    assert dominance_metrics([(0.1, 0.1), (0.2, 0.1)], [(0.05, 0.2), (0.1, 0.2)]) == (100.0, 0.0)
    pagan = [(0.10, 0.2), (0.05, 0.1), (0.08, 0.3), (0.06, 0.2)]
    markowitz = [(0.08, 0.2), (0.05, 0.1), (0.09, 0.2), (0.07, 0.1)]
    p2m, m2p = dominance_metrics(pagan, markowitz)
    assert (p2m, m2p) == (25.0, 50.0)
    assert p2m + m2p <= 100.0
    with pytest.raises(ContractError):
        dominance_metrics(pagan, markowitz[:3])


# (return of a vs b, volatility of a vs b) -> a dominates b
DOMINANCE_TABLE = {
    (1, -1): True,
    (1, 0): True,
    (1, 1): False,
    (0, -1): True,
    (0, 0): False,
    (0, 1): False,
    (-1, -1): False,
    (-1, 0): False,
    (-1, 1): False,
}


@pytest.mark.parametrize("ret_sign,vol_sign", sorted(DOMINANCE_TABLE))
def test_dominates_truth_table(ret_sign, vol_sign):
    ret_b, vol_b = 0.05, 0.2
    ret_a, vol_a = ret_b + 0.01 * ret_sign, vol_b + 0.01 * vol_sign
    assert dominates(ret_a, vol_a, ret_b, vol_b) is DOMINANCE_TABLE[(ret_sign, vol_sign)]
    # never both ways
    assert not (dominates(ret_a, vol_a, ret_b, vol_b) and dominates(ret_b, vol_b, ret_a, vol_a))


point = st.tuples(
    st.sampled_from([0.0, 0.05, 0.1]) | st.floats(-0.5, 0.5),
    st.sampled_from([0.1, 0.2]) | st.floats(0.0, 1.0),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(point, point), min_size=1, max_size=25))
def test_dominance_shares_never_exceed_the_grid(levels):
    pagan = [p for p, _ in levels]
    markowitz = [m for _, m in levels]
    p2m, m2p = dominance_metrics(pagan, markowitz)
    assert 0.0 <= p2m <= 100.0 and 0.0 <= m2p <= 100.0
    assert p2m + m2p <= 100.0 + 1e-9
    assert dominance_metrics(markowitz, pagan) == (m2p, p2m)


@pytest.fixture
def deps(synth_table):
    train = synth_table.slice_days(0, 100)
    model = markowitz_estimate(train, 5)
    grid = risk_grid(max(model.r_max, 1.0), 3)
    return BacktestDeps(model=model, grid=grid, frontier=markowitz_frontier(model, grid))


def test_markowitz_weights_fixed_from_training(synth_table, deps):
    spec = StrategySpec(kind="markowitz", risk_level=2)
    ledger = run_backtest(synth_table, spec, deps, seed=0, test_start=100)
    assert len(ledger.dates) == 20
    assert all(end == synth_table.dates[99] for end in ledger.conditioning_end)
    np.testing.assert_array_equal(ledger.weights[0], deps.frontier[1].weights)
    check_ledger(ledger, synth_table, 100, tol=1e-12)


def test_default_baseline_is_repeatable(synth_table, deps):
    spec = StrategySpec(kind="default", risk_level=3)
    first = run_backtest(synth_table, spec, deps, seed=4, test_start=100)
    second = run_backtest(synth_table, spec, deps, seed=4, test_start=100)
    np.testing.assert_array_equal(first.values, second.values)
    assert not np.array_equal(first.weights[0], first.weights[1])


def test_allocator_configuration_errors(deps):
    with pytest.raises(ConfigError):
        make_allocator(StrategySpec(kind="pagan"), deps, 0, 2, 99)
    with pytest.raises(ConfigError):
        make_allocator(StrategySpec(kind="default", risk_level=4), deps, 0, 2, 99)
    with pytest.raises(ConfigError):
        make_allocator(StrategySpec(kind="buy_and_hold", asset=2), deps, 0, 2, 99)
    no_frontier = BacktestDeps(model=deps.model, grid=deps.grid)
    with pytest.raises(ConfigError):
        make_allocator(StrategySpec(kind="markowitz", risk_level=1), no_frontier, 0, 2, 99)


def test_pagan_backtest_with_untrained_generator(synth_table, deps):
    hp = tiny_hyperparams()
    generator, _ = build_networks(hp, 0)
    decider = PaganDecider(
        ScenarioGenerator(generator, synth_table.tickers),
        deps.grid,
        NsgaParams(population=8, generations=2),
        n_scenarios=16,
        seed=1,
    )
    pagan_deps = BacktestDeps(model=deps.model, grid=deps.grid, pagan=decider)
    low = run_backtest(synth_table, StrategySpec(kind="pagan", risk_level=1), pagan_deps, 1, 110)
    high = run_backtest(synth_table, StrategySpec(kind="pagan", risk_level=3), pagan_deps, 1, 110)
    check_ledger(low, synth_table, 110, tol=1e-12)
    assert low.conditioning_end[:-1] == low.dates[:-1]
    selections = decider.selections(synth_table, 110)
    np.testing.assert_array_equal(low.weights[0], selections[0])
    np.testing.assert_array_equal(high.weights[0], selections[2])
    assert decider.selections(synth_table, 110) is selections
