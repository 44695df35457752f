import bisect
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any, Dict, Optional

from app.core.config import RunConfig
from app.core.exceptions import DataError
from app.db.exports import write_price_table
from app.db.models import PriceTable
from app.services.market_data import load_csv, sanity_check, synth_correlated_gbm, table_digest
from app.worker import task

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunPaths:
    """File layout of one output directory."""

    root: Path

    @property
    def dataset(self) -> Path:
        return self.root / "dataset.csv"

    def checkpoint(self, seed: int) -> Path:
        return self.root / "checkpoints" / f"ckpt_seed{seed}.bin"

    def training_log(self, seed: int) -> Path:
        return self.root / "training" / f"log_seed{seed}.csv"

    def scenarios(self, day: date, seed: int) -> Path:
        return self.root / "scenarios" / f"scenarios_{day.isoformat()}_seed{seed}.csv"

    def fan_chart(self, day: date, seed: int) -> Path:
        return self.root / "scenarios" / f"fan_{day.isoformat()}_seed{seed}.svg"

    def frontier(self, kind: str, day: date, seed: int) -> Path:
        return self.root / "frontiers" / f"{kind}_{day.isoformat()}_seed{seed}.csv"

    def backtest_dir(self, seed: int) -> Path:
        return self.root / "backtest" / f"seed{seed}"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"


def load_table(config: RunConfig, out_dir: Optional[Path] = None) -> PriceTable:
    """
    The price table for a run.

    With ``out_dir`` set, the dataset written there by ingest takes precedence
    over the configured source; ingest again to change the data of a run.
    """
    if out_dir is not None:
        dataset = RunPaths(Path(out_dir)).dataset
        if dataset.is_file():
            logger.info(f"Using ingested dataset {dataset}")
            return load_csv(dataset)
    if config.csv is not None:
        return load_csv(config.csv)
    return synth_correlated_gbm(config.synth_config())


def test_start_index(config: RunConfig, table: PriceTable) -> int:
    """First test day: the split date if set, otherwise the last ``test_days`` days."""
    if config.split_date is not None:
        index = table.index_on_or_after(config.split_date)
    else:
        index = table.n_days - config.test_days
    if not 1 <= index <= table.n_days - 2:
        raise DataError(
            f"Test period starting at day {index} of {table.n_days} leaves no train "
            f"period or fewer than 2 test days"
        )
    return index


def index_on_or_before(table: PriceTable, day: date) -> int:
    index = bisect.bisect_right(table.dates, day) - 1
    if index < 0:
        raise DataError(f"No trading day on or before {day} (table starts {table.dates[0]})")
    return index


def decision_day(config: RunConfig, table: PriceTable, day: Optional[date]) -> int:
    """Table index of the requested day, defaulting to the last training day."""
    if day is None:
        return test_start_index(config, table) - 1
    return index_on_or_before(table, day)


def ingest_dataset(config: RunConfig, out_dir: Path, sanity: bool = False) -> Dict[str, Any]:
    table = load_table(config)
    paths = RunPaths(Path(out_dir))
    write_price_table(table, paths.dataset)
    spikes = sanity_check(table) if sanity else []
    digest = table_digest(table)
    logger.info(f"Ingested {table.n_assets} assets over {table.n_days} days, digest {digest[:12]}")
    return {
        "assets": table.n_assets,
        "days": table.n_days,
        "tickers": list(table.tickers),
        "start": table.dates[0].isoformat(),
        "end": table.dates[-1].isoformat(),
        "digest": digest,
        "path": str(paths.dataset),
        "spikes": [
            {"ticker": ticker, "date": day.isoformat(), "ratio": ratio} for ticker, day, ratio in spikes
        ],
    }


ingest = task("ingest")(ingest_dataset)
