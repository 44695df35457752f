"""
CSV files written and re-read by the toolkit.

Every file has a header row; floats are written at full precision so that
re-reading reproduces the written values.
"""

import logging
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.exceptions import DataError
from app.db.models import BacktestLedger, Diversification, PerformanceReport, PriceTable, RiskGrid, ScenarioSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SETTING_NAMES = {5: "defensive", 13: "balanced", 21: "aggressive"}


def setting_name(risk_level: Optional[int]) -> str:
    if risk_level is None:
        return "-"
    return SETTING_NAMES.get(risk_level, f"z{risk_level}")


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_frame(path: PathLike, required: Iterable[str] = ()) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"Cannot parse {path}: {exc}") from exc
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns: {', '.join(missing)}")
    return frame


def weight_columns(tickers: Sequence[str]) -> List[str]:
    return [f"w_{t}" for t in tickers]


# ---------------------------------------------------------------------------
# Prices and scenarios
# ---------------------------------------------------------------------------


def write_price_table(table: PriceTable, path: PathLike) -> Path:
    frame = pd.DataFrame(table.prices.T, columns=list(table.tickers))
    frame.insert(0, "date", [d.isoformat() for d in table.dates])
    return write_frame(frame, path)


def write_scenarios(scenarios: ScenarioSet, path: PathLike) -> Path:
    """Long format: one row per (scenario, ticker, day); n * A * Wf rows."""
    n, n_assets, horizon = scenarios.paths.shape
    tickers = scenarios.tickers or tuple(f"asset{i + 1}" for i in range(n_assets))
    frame = pd.DataFrame(
        {
            "scenario": np.repeat(np.arange(n), n_assets * horizon),
            "ticker": np.tile(np.repeat(np.array(tickers, dtype=object), horizon), n),
            "day": np.tile(np.arange(1, horizon + 1), n * n_assets),
            "price": scenarios.paths.reshape(-1),
        }
    )
    return write_frame(frame, path)


def read_scenarios(path: PathLike, anchor: np.ndarray, source: str = "gan") -> ScenarioSet:
    frame = read_frame(path, ["scenario", "ticker", "day", "price"])
    tickers = tuple(pd.unique(frame["ticker"]).tolist())
    n = int(frame["scenario"].max()) + 1
    horizon = int(frame["day"].max())
    if len(frame) != n * len(tickers) * horizon:
        raise DataError(f"{path}: {len(frame)} rows do not form {n} x {len(tickers)} x {horizon}")
    frame = frame.sort_values(["scenario", "ticker", "day"], key=_ticker_order(tickers), kind="stable")
    paths = frame["price"].to_numpy(dtype=np.float64).reshape(n, len(tickers), horizon)
    return ScenarioSet(anchor=anchor, paths=paths, source=source, tickers=tickers)


def _ticker_order(tickers: Sequence[str]):
    order = {t: i for i, t in enumerate(tickers)}

    def key(column: pd.Series) -> pd.Series:
        if column.name == "ticker":
            return column.map(order)
        return column

    return key


# ---------------------------------------------------------------------------
# Frontiers, ledgers and reports
# ---------------------------------------------------------------------------


def write_frontier(
    path: PathLike,
    grid: RiskGrid,
    weights: Sequence[Diversification],
    est_return: Sequence[float],
    est_variance: Sequence[float],
    tickers: Sequence[str],
) -> Path:
    columns = weight_columns(tickers)
    frame = pd.DataFrame(np.stack([w.weights for w in weights]), columns=columns)
    frame.insert(0, "target_return", grid.targets)
    frame.insert(0, "zeta", np.arange(1, grid.levels + 1))
    frame["est_return"] = list(est_return)
    frame["est_variance"] = list(est_variance)
    return write_frame(frame, path)


def write_ledger(ledger: BacktestLedger, path: PathLike) -> Path:
    frame = pd.DataFrame(ledger.weights, columns=weight_columns(ledger.tickers))
    frame.insert(0, "conditioning_end", [d.isoformat() for d in ledger.conditioning_end])
    frame.insert(0, "realized_return", ledger.realized_returns)
    frame.insert(0, "value", ledger.values)
    frame.insert(0, "date", [d.isoformat() for d in ledger.dates])
    return write_frame(frame, path)


def read_ledger(path: PathLike, strategy: str = "", risk_level: Optional[int] = None) -> BacktestLedger:
    frame = read_frame(path, ["date", "value", "realized_return", "conditioning_end"])
    weight_cols = [c for c in frame.columns if c.startswith("w_")]
    return BacktestLedger(
        strategy=strategy or Path(path).stem,
        dates=[date.fromisoformat(d) for d in frame["date"]],
        values=frame["value"].to_numpy(dtype=np.float64),
        realized_returns=frame["realized_return"].to_numpy(dtype=np.float64),
        weights=frame[weight_cols].to_numpy(dtype=np.float64),
        conditioning_end=[date.fromisoformat(d) for d in frame["conditioning_end"]],
        tickers=tuple(c[2:] for c in weight_cols),
        risk_level=risk_level,
    )


def report_frame(reports: Sequence[PerformanceReport], seed: Optional[int] = None) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = {
            "strategy": report.strategy,
            "setting": setting_name(report.risk_level),
            "risk_level": report.risk_level if report.risk_level is not None else 0,
            "monthly_return": report.monthly_return,
            "annual_return": report.annual_return,
            "volatility": report.annual_volatility,
            "sharpe": report.sharpe if report.sharpe is not None else np.nan,
            "final_value": report.final_value,
        }
        if seed is not None:
            row = {"seed": seed, **row}
        rows.append(row)
    return pd.DataFrame(rows)


def write_reports(reports: Sequence[PerformanceReport], path: PathLike, seed: Optional[int] = None) -> Path:
    return write_frame(report_frame(reports, seed), path)


def write_level_table(
    path: PathLike,
    strategy: str,
    reports: Sequence[PerformanceReport],
    tickers: Sequence[str],
) -> Path:
    """Per risk level results of one strategy, with its average diversification."""
    frame = report_frame(reports)
    frame["strategy"] = strategy
    weights = pd.DataFrame([r.mean_weights for r in reports], columns=weight_columns(tickers))
    return write_frame(pd.concat([frame, weights], axis=1), path)


def read_level_table(path: PathLike) -> pd.DataFrame:
    return read_frame(path, ["strategy", "risk_level", "annual_return", "volatility"])


def write_dominance(path: PathLike, per_seed: Dict[int, tuple], summary: Dict[str, Dict[str, float]]) -> Path:
    rows = [
        {"seed": str(seed), "pagan2m": values[0], "m2pagan": values[1]}
        for seed, values in sorted(per_seed.items())
    ]
    for name, stats in summary.items():
        rows.append({"seed": name, "pagan2m": stats["pagan2m"], "m2pagan": stats["m2pagan"]})
    return write_frame(pd.DataFrame(rows, columns=["seed", "pagan2m", "m2pagan"]), path)


def write_training_log(rows: Sequence[Dict[str, float]], path: PathLike) -> Path:
    columns = ["step", "critic_loss", "gp", "generator_loss", "diversity"]
    return write_frame(pd.DataFrame(list(rows), columns=columns), path)


def read_training_log(path: PathLike) -> pd.DataFrame:
    return read_frame(path, ["step", "critic_loss", "gp", "generator_loss", "diversity"])
