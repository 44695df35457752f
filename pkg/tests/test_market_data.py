from datetime import date

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from app.core.exceptions import ConfigError, DataError
from app.db.models import RawWindow, SynthConfig
from app.services.market_data import (
    build_dataset,
    conditioning_window,
    denormalize_path,
    load_csv,
    make_windows,
    normalize_window,
    sanity_check,
    split_table,
    synth_correlated_gbm,
    table_digest,
    window_count,
)
from conftest import make_table


def write_csv(tmp_path, text):
    path = tmp_path / "prices.csv"
    path.write_text(text)
    return path


def test_load_well_formed_csv(tmp_path):
    path = write_csv(tmp_path, "date,AAA,BBB\n2020-01-02,10,20\n2020-01-03,11,21\n2020-01-06,12,22\n")
    table = load_csv(path)
    assert table.prices.shape == (2, 3)
    assert table.tickers == ("AAA", "BBB")
    assert table.dates[-1] == date(2020, 1, 6)
    np.testing.assert_allclose(table.prices[1], [20.0, 21.0, 22.0])


def test_blank_cell_names_row_and_ticker(tmp_path):
    path = write_csv(tmp_path, "date,AAA,BBB\n2020-01-02,10,20\n2020-01-03,11,\n")
    with pytest.raises(DataError) as excinfo:
        load_csv(path)
    assert excinfo.value.row == 3
    assert excinfo.value.ticker == "BBB"


@pytest.mark.parametrize(
    "body",
    [
        "2020-01-02,10\n2020-01-02,11\n",
        "2020-01-03,10\n2020-01-02,11\n",
        "2020-01-02,10\n2020-01-03,-1\n",
        "2020-01-02,10\n2020-01-03,abc\n",
        "2020-01-02,10\nnot-a-date,11\n",
    ],
)
def test_bad_rows_are_rejected(tmp_path, body):
    with pytest.raises(DataError):
        load_csv(write_csv(tmp_path, "date,AAA\n" + body))


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "nope.csv")


def test_spike_loads_but_is_flagged(tmp_path):
    path = write_csv(tmp_path, "date,AAA\n2020-01-02,10\n2020-01-03,100\n2020-01-06,10\n")
    table = load_csv(path)
    flagged = sanity_check(table)
    assert [(t, d) for t, d, _ in flagged] == [("AAA", date(2020, 1, 3)), ("AAA", date(2020, 1, 6))]
    assert flagged[0][2] == pytest.approx(10.0)


def test_window_counts():
    assert window_count(61, 40, 20) == 1
    assert window_count(70, 40, 20) == 10
    assert len(make_windows(make_table(np.linspace(10, 20, 70)), 40, 20)) == 10
    with pytest.raises(DataError):
        make_windows(make_table(np.linspace(10, 20, 60)), 40, 20)


def test_windows_respect_stride():
    windows = make_windows(make_table(np.arange(1.0, 31.0)), 5, 4, stride=3)
    assert [w.start for w in windows] == [0, 3, 6, 9, 12, 15, 18]
    assert all(w.prices.shape == (1, 10) for w in windows)


def test_normalize_hand_example():
    raw = RawWindow(np.array([[12.0, 10.0, 20.0, 15.0, 18.0]]), 0, 3, 1)
    window = normalize_window(raw)
    # Backward days 10, 20, 15 scale to -1, 1, 0
    np.testing.assert_allclose(window.backward, [[-0.4, 2.0, -1.0]])
    assert window.analysis[0] == pytest.approx(10.0 / 15.0)
    assert window.anchor_normalized[0] == pytest.approx(0.0)
    assert window.anchor_raw[0] == 15.0
    np.testing.assert_allclose(window.forward, [[0.6]])


def test_constant_backward_is_degenerate():
    raw = RawWindow(np.full((1, 6), 50.0), 0, 4, 1)
    window = normalize_window(raw)
    assert window.is_degenerate
    assert window.analysis[0] == 0.0
    np.testing.assert_array_equal(window.full(), np.zeros((1, 5)))


def test_forward_extrapolates_outside_unit_range():
    backward = np.linspace(10.0, 20.0, 11)
    raw = RawWindow(np.concatenate([[10.0], backward, [30.0]])[None], 0, 11, 1)
    window = normalize_window(raw)
    scaled_forward = window.anchor_normalized[0] + window.forward[0, 0]
    assert scaled_forward == pytest.approx(3.0)


def test_denormalize_examples():
    raw = RawWindow(np.array([[10.0, 10.0, 20.0, 15.0, 15.0]]), 0, 3, 1)
    window = normalize_window(raw)
    np.testing.assert_allclose(denormalize_path(np.zeros((1, 3)), window), [[15.0, 15.0, 15.0]])
    np.testing.assert_allclose(denormalize_path(np.array([[0.2]]), window), [[16.0]])


def test_denormalize_holds_degenerate_assets_at_anchor():
    raw = RawWindow(np.array([[7.0, 7.0, 7.0, 7.0], [1.0, 2.0, 3.0, 4.0]]), 0, 3, 0)
    window = normalize_window(raw)
    prices = denormalize_path(np.full((2, 3), 0.5), window)
    np.testing.assert_allclose(prices[0], [7.0, 7.0, 7.0])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(1.0, 1000.0), min_size=6, max_size=6),
    st.floats(0.01, 100.0),
)
def test_window_round_trip_and_scale_invariance(prices, factor):
    prices = np.array(prices)[None]
    window = normalize_window(RawWindow(prices, 0, 4, 1))
    assume(not window.degenerate[0])
    rebuilt = denormalize_path(window.forward, window)
    np.testing.assert_allclose(rebuilt, prices[:, -1:], rtol=1e-9)
    if np.ptp(prices[0, 1:5]) >= 1e-3:
        scaled = normalize_window(RawWindow(prices * factor, 0, 4, 1))
        np.testing.assert_allclose(scaled.analysis, window.analysis, rtol=1e-9)


@pytest.mark.parametrize("span", [2e-3, 1e-3, 9.99e-4, 1e-6, 1e-9])
def test_round_trip_of_nearly_flat_windows(span):
    backward = 100.0 + span * np.array([0.0, 1.0, 0.5, 0.25])
    prices = np.concatenate([[100.0], backward, [100.3]])[None]
    window = normalize_window(RawWindow(prices, 0, 4, 1))
    assert not window.degenerate[0]
    rebuilt = denormalize_path(window.forward, window)
    np.testing.assert_allclose(rebuilt, [[100.3]], rtol=1e-9)


def test_flat_window_below_degenerate_scale_holds_anchor():
    prices = np.array([[100.0, 100.0, 100.0 + 1e-12, 100.0, 100.0, 100.3]])
    window = normalize_window(RawWindow(prices, 0, 4, 1))
    assert window.degenerate[0]
    np.testing.assert_allclose(denormalize_path(window.forward, window), [[100.0]])


def test_conditioning_window_ends_on_requested_day(synth_table):
    window = conditioning_window(synth_table, 50, 40)
    assert window.backward.shape == (2, 40)
    assert window.forward.shape == (2, 0)
    np.testing.assert_allclose(window.anchor_raw, synth_table.prices[:, 50])
    with pytest.raises(DataError):
        conditioning_window(synth_table, 39, 40)


def test_build_dataset_drops_degenerate_windows():
    flat = np.full(20, 5.0)
    moving = np.linspace(1.0, 2.0, 20)
    table = make_table(np.stack([moving, np.concatenate([flat[:12], np.linspace(5.0, 6.0, 8)])]))
    windows = [normalize_window(w) for w in make_windows(table, 5, 2)]
    dataset = build_dataset(table, 5, 2)
    assert len(dataset) == sum(not w.is_degenerate for w in windows)
    assert len(dataset) < len(windows)


def test_split_table(synth_table):
    train, test = split_table(synth_table, synth_table.dates[100])
    assert train.n_days == 100 and test.n_days == 20
    with pytest.raises(DataError):
        split_table(synth_table, date(1990, 1, 1))


def gbm_config(**overrides):
    values = dict(
        assets=2, days=50, drift=[0.001, 0.001], volatility=[0.02, 0.02],
        correlation=[[1.0, 0.0], [0.0, 1.0]], seed=3,
    )
    values.update(overrides)
    return SynthConfig(**values)


def test_zero_volatility_is_exponential_drift():
    table = synth_correlated_gbm(gbm_config(volatility=[0.0, 0.0], drift=[0.01, -0.01]))
    days = np.arange(50)
    np.testing.assert_allclose(table.prices[0], 100.0 * np.exp(0.01 * days))
    np.testing.assert_allclose(table.prices[1], 100.0 * np.exp(-0.01 * days))


def test_perfect_correlation_gives_identical_paths():
    table = synth_correlated_gbm(gbm_config(correlation=[[1.0, 1.0], [1.0, 1.0]]))
    np.testing.assert_allclose(table.prices[0], table.prices[1])


def test_sample_correlation():
    table = synth_correlated_gbm(gbm_config(days=10_000, correlation=[[1.0, 0.8], [0.8, 1.0]]))
    log_returns = np.diff(np.log(table.prices), axis=1)
    assert 0.75 <= np.corrcoef(log_returns)[0, 1] <= 0.85


def test_non_psd_correlation_is_config_error():
    with pytest.raises(ConfigError):
        synth_correlated_gbm(
            gbm_config(assets=3, drift=[0.0] * 3, volatility=[0.01] * 3,
                       correlation=[[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        )


def test_synthetic_market_is_deterministic():
    assert table_digest(synth_correlated_gbm(gbm_config())) == table_digest(synth_correlated_gbm(gbm_config()))
    assert table_digest(synth_correlated_gbm(gbm_config())) != table_digest(
        synth_correlated_gbm(gbm_config(seed=4))
    )
