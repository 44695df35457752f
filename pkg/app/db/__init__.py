"""
Persistence: domain records, checkpoint files and CSV exports.
"""

from .checkpoints import load_checkpoint, save_checkpoint
from .exports import (
    read_ledger,
    read_level_table,
    read_scenarios,
    read_training_log,
    write_dominance,
    write_frontier,
    write_ledger,
    write_level_table,
    write_price_table,
    write_reports,
    write_scenarios,
    write_training_log,
)
from .models import (
    BacktestLedger,
    Checkpoint,
    Diversification,
    GanHyperParams,
    MarketWindow,
    NsgaParams,
    PriceTable,
    ScenarioSet,
    StrategySpec,
)

__all__ = [
    "load_checkpoint",
    "save_checkpoint",
    "read_ledger",
    "read_level_table",
    "read_scenarios",
    "read_training_log",
    "write_dominance",
    "write_frontier",
    "write_ledger",
    "write_level_table",
    "write_price_table",
    "write_reports",
    "write_scenarios",
    "write_training_log",
    "BacktestLedger",
    "Checkpoint",
    "Diversification",
    "GanHyperParams",
    "MarketWindow",
    "NsgaParams",
    "PriceTable",
    "ScenarioSet",
    "StrategySpec",
]
