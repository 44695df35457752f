from datetime import date, timedelta

import numpy as np
import pytest

from app.db.models import GanHyperParams, PriceTable, SynthConfig
from app.services.market_data import synth_correlated_gbm


def make_table(prices, tickers=None, start=date(2020, 1, 1)) -> PriceTable:
    """Price table on consecutive calendar days."""
    prices = np.asarray(prices, dtype=np.float64)
    if prices.ndim == 1:
        prices = prices[None]
    tickers = tickers or tuple(f"T{i}" for i in range(prices.shape[0]))
    dates = tuple(start + timedelta(days=i) for i in range(prices.shape[1]))
    return PriceTable(tuple(tickers), dates, prices)


def tiny_hyperparams(assets: int = 2, **overrides) -> GanHyperParams:
    values = dict(
        assets=assets,
        wb=8,
        wf=4,
        cond_layers=2,
        tconv_layers=1,
        disc_layers=2,
        kernel_size=3,
        batch_size=4,
        n_critic=1,
        training_steps=2,
        log_every=1,
        checkpoint_every=0,
        sn_warmup=5,
        diversity_samples=4,
        learning_rate=1e-3,
    )
    values.update(overrides)
    return GanHyperParams(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_hp():
    return tiny_hyperparams()


@pytest.fixture
def synth_table():
    config = SynthConfig(
        assets=2,
        days=120,
        drift=[0.0005, 0.0002],
        volatility=[0.015, 0.01],
        correlation=[[1.0, 0.3], [0.3, 1.0]],
        seed=7,
        tickers=["AAA", "BBB"],
    )
    return synth_correlated_gbm(config)
