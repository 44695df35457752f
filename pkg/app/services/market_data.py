"""
Price tables, windows and the normalization the scenario networks train on.
"""

import hashlib
import logging
from datetime import date
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigError, DataError
from app.db.models import MarketWindow, PriceTable, RawWindow, SynthConfig

logger = logging.getLogger(__name__)

DEGENERATE_SCALE = 1e-12
SANITY_RATIO = 5.0


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_csv(path: Union[str, Path]) -> PriceTable:
    """
    Read a wide CSV with header ``date,<ticker1>,...,<tickerA>``.

    Rows are reported with their line number in the file (the header is line 1).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"Cannot parse {path}: {exc}") from exc

    columns = [str(c).strip() for c in frame.columns]
    if len(columns) < 2 or columns[0].lower() != "date":
        raise DataError(f"{path}: header must be date,<ticker1>,...; got {','.join(columns)}")
    tickers = columns[1:]
    if len(set(tickers)) != len(tickers):
        raise DataError(f"{path}: duplicate ticker columns")
    if frame.empty:
        raise DataError(f"{path}: no price rows")

    dates: List[date] = []
    prices = np.empty((len(tickers), len(frame)))
    for i, row in enumerate(frame.itertuples(index=False, name=None)):
        line = i + 2
        try:
            dates.append(date.fromisoformat(str(row[0]).strip()))
        except ValueError:
            raise DataError(f"Invalid ISO date {row[0]!r}", row=line) from None
        for j, ticker in enumerate(tickers):
            cell = str(row[j + 1]).strip()
            if not cell:
                raise DataError("Empty price cell", row=line, ticker=ticker)
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"Invalid price {cell!r}", row=line, ticker=ticker) from None
            if not np.isfinite(value):
                raise DataError(f"Non-finite price {cell!r}", row=line, ticker=ticker)
            if value <= 0:
                raise DataError(f"Non-positive price {cell!r}", row=line, ticker=ticker)
            prices[j, i] = value
        if i > 0 and dates[i] <= dates[i - 1]:
            raise DataError(
                f"Dates not strictly increasing ({dates[i - 1]} then {dates[i]})", row=line
            )

    table = PriceTable(tuple(tickers), tuple(dates), prices)
    logger.info(
        f"Loaded {table.n_assets} assets x {table.n_days} days from {path} "
        f"({table.dates[0]} to {table.dates[-1]})"
    )
    return table


def sanity_check(table: PriceTable, ratio: float = SANITY_RATIO) -> List[Tuple[str, date, float]]:
    """
    Flag consecutive-day price ratios above ``ratio`` (or below 1 / ratio).

    Returns:
        (ticker, date, ratio) for every flagged day
    """
    flagged = []
    if table.n_days < 2:
        return flagged
    moves = table.prices[:, 1:] / table.prices[:, :-1]
    for asset, day in np.argwhere((moves > ratio) | (moves < 1.0 / ratio)):
        move = float(moves[asset, day])
        flagged.append((table.tickers[asset], table.dates[day + 1], move))
        logger.warning(
            f"Suspicious move for {table.tickers[asset]} on {table.dates[day + 1]}: x{move:.3f}"
        )
    return flagged


def table_digest(table: PriceTable) -> str:
    """sha256 over tickers, ISO dates and little-endian prices."""
    digest = hashlib.sha256()
    digest.update(",".join(table.tickers).encode())
    digest.update(",".join(d.isoformat() for d in table.dates).encode())
    digest.update(np.ascontiguousarray(table.prices, dtype="<f8").tobytes())
    return digest.hexdigest()


def split_table(table: PriceTable, split_date: date) -> Tuple[PriceTable, PriceTable]:
    """Train = days before split_date, test = days on or after it."""
    index = table.index_on_or_after(split_date)
    if index == 0 or index == table.n_days:
        raise DataError(
            f"Split date {split_date} leaves an empty train or test period "
            f"({table.dates[0]} to {table.dates[-1]})"
        )
    return table.slice_days(0, index), table.slice_days(index, table.n_days)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def window_count(n_days: int, wb: int, wf: int, stride: int = 1) -> int:
    span = wb + wf + 1
    if n_days < span:
        return 0
    return (n_days - span) // stride + 1


def make_windows(table: PriceTable, wb: int, wf: int, stride: int = 1) -> List[RawWindow]:
    """Sliding windows of wb + wf + 1 prices; window k starts at k * stride."""
    if wb < 1 or wf < 0 or stride < 1:
        raise ConfigError(f"Invalid window sizes wb={wb}, wf={wf}, stride={stride}")
    span = wb + wf + 1
    if table.n_days < span:
        raise DataError(
            f"Table has {table.n_days} days; a window needs {span} (wb={wb}, wf={wf})"
        )
    count = window_count(table.n_days, wb, wf, stride)
    return [
        RawWindow(table.prices[:, k * stride : k * stride + span], k * stride, wb, wf, table.tickers)
        for k in range(count)
    ]


def normalize_window(raw: RawWindow) -> MarketWindow:
    """
    Scale each asset with the min/max of its backward days into [-1, 1] and
    take daily variations over all W days.

    Backward days are indices 1..wb of the raw window; index 0 only supplies
    the first variation.
    """
    prices = raw.prices
    backward = prices[:, 1 : raw.wb + 1]
    pmin = backward.min(axis=1)
    pmax = backward.max(axis=1)
    pmean = backward.mean(axis=1)
    span = pmax - pmin
    degenerate = span <= DEGENERATE_SCALE * pmean

    safe_span = np.where(degenerate, 1.0, span)
    scaled = 2.0 * (prices - pmin[:, None]) / safe_span[:, None] - 1.0
    scaled[degenerate] = 0.0
    variations = np.diff(scaled, axis=1)
    analysis = np.where(degenerate, 0.0, span / pmean)

    return MarketWindow(
        backward=variations[:, : raw.wb],
        forward=variations[:, raw.wb :],
        pmin=pmin,
        pmax=pmax,
        analysis=analysis,
        anchor_normalized=scaled[:, raw.wb],
        anchor_raw=prices[:, raw.wb].copy(),
        degenerate=degenerate,
        anchor_index=raw.anchor_index,
        tickers=raw.tickers,
    )


def denormalize_path(variations: np.ndarray, window: MarketWindow) -> np.ndarray:
    """
    Invert the normalization for forward variations (A x Wf, or n x A x Wf).

    Degenerate assets are held constant at the anchor price.
    """
    variations = np.asarray(variations, dtype=np.float64)
    n_assets = window.anchor_raw.shape[0]
    if variations.shape[-2] != n_assets:
        raise DataError(
            f"Variations for {variations.shape[-2]} assets, window has {n_assets}"
        )
    scaled = window.anchor_normalized[:, None] + np.cumsum(variations, axis=-1)
    span = (window.pmax - window.pmin)[:, None]
    prices = (scaled + 1.0) / 2.0 * span + window.pmin[:, None]
    degenerate = np.asarray(window.degenerate, dtype=bool)
    if degenerate.any():
        held = np.broadcast_to(window.anchor_raw[:, None], prices.shape[-2:])
        prices = np.where(degenerate[:, None], held, prices)
    return prices


def conditioning_window(table: PriceTable, end_index: int, wb: int) -> MarketWindow:
    """Inference window whose last backward day is table day ``end_index``."""
    start = end_index - wb
    if start < 0 or end_index >= table.n_days:
        raise DataError(
            f"Conditioning window ending at day {end_index} needs {wb + 1} prior prices"
        )
    raw = RawWindow(table.prices[:, start : end_index + 1], start, wb, 0, table.tickers)
    return normalize_window(raw)


def build_dataset(table: PriceTable, wb: int, wf: int, stride: int = 1) -> List[MarketWindow]:
    """Normalized training windows; windows with a degenerate asset are dropped."""
    windows = [normalize_window(raw) for raw in make_windows(table, wb, wf, stride)]
    dataset = [w for w in windows if not w.is_degenerate]
    skipped = len(windows) - len(dataset)
    if skipped:
        logger.warning(f"Skipped {skipped} degenerate windows out of {len(windows)}")
    logger.info(f"Built dataset of {len(dataset)} windows (wb={wb}, wf={wf}, stride={stride})")
    return dataset


# ---------------------------------------------------------------------------
# Synthetic markets
# ---------------------------------------------------------------------------


def _correlation_factor(correlation: np.ndarray) -> np.ndarray:
    """Matrix L with L @ L.T == correlation; PSD but singular matrices are allowed."""
    if correlation.ndim != 2 or correlation.shape[0] != correlation.shape[1]:
        raise ConfigError(f"Correlation matrix must be square, got {correlation.shape}")
    if not np.allclose(correlation, correlation.T, atol=1e-12):
        raise ConfigError("Correlation matrix is not symmetric")
    if not np.allclose(np.diag(correlation), 1.0, atol=1e-12):
        raise ConfigError("Correlation matrix must have a unit diagonal")
    try:
        return np.linalg.cholesky(correlation)
    except np.linalg.LinAlgError:
        eigenvalues, eigenvectors = np.linalg.eigh(correlation)
        if eigenvalues.min() < -1e-10:
            raise ConfigError(
                f"Correlation matrix is not positive semi-definite "
                f"(smallest eigenvalue {eigenvalues.min():.3g})"
            ) from None
        eigenvalues = np.where(eigenvalues > 1e-12, eigenvalues, 0.0)
        return eigenvectors * np.sqrt(eigenvalues)


def synth_correlated_gbm(config: SynthConfig) -> PriceTable:
    """
    Geometric Brownian motion with correlated daily shocks.

    Log increments are (mu - sigma^2 / 2) + sigma * z with z ~ N(0, correlation).
    """
    n = config.assets
    if n < 1 or config.days < 1:
        raise ConfigError("Synthetic market needs at least one asset and one day")
    drift = np.asarray(config.drift, dtype=np.float64)
    volatility = np.asarray(config.volatility, dtype=np.float64)
    correlation = np.asarray(config.correlation, dtype=np.float64)
    if drift.shape != (n,) or volatility.shape != (n,):
        raise ConfigError(f"drift and volatility need {n} values each")
    if np.any(volatility < 0):
        raise ConfigError("volatility must be non-negative")
    if correlation.shape != (n, n):
        raise ConfigError(f"correlation must be {n} x {n}, got {correlation.shape}")
    factor = _correlation_factor(correlation)

    rng = np.random.default_rng(config.seed)
    shocks = factor @ rng.standard_normal((n, config.days - 1))
    increments = (drift - 0.5 * volatility**2)[:, None] + volatility[:, None] * shocks
    log_prices = np.concatenate(
        [np.zeros((n, 1)), np.cumsum(increments, axis=1)], axis=1
    )
    prices = config.start_price * np.exp(log_prices)

    dates = tuple(d.date() for d in pd.bdate_range(config.start_date, periods=config.days))
    table = PriceTable(tuple(config.ticker_names()), dates, prices)
    logger.info(f"Synthesized {n} assets x {config.days} days (seed={config.seed})")
    return table
