"""
Command bodies.

Each module registers its commands with ``app.worker.task``; importing this
package fills ``app.worker.TASKS``.
"""

from .data_tasks import RunPaths, ingest, ingest_dataset, load_table, test_start_index
from .model_tasks import simulate, simulate_scenarios, train, train_seed, train_seeds
from .portfolio_tasks import (
    backtest,
    backtest_seed,
    backtest_seeds,
    build_report,
    optimize,
    optimize_frontiers,
    report,
    run,
    run_pipeline,
)

__all__ = [
    "RunPaths",
    "ingest",
    "ingest_dataset",
    "load_table",
    "test_start_index",
    "simulate",
    "simulate_scenarios",
    "train",
    "train_seed",
    "train_seeds",
    "backtest",
    "backtest_seed",
    "backtest_seeds",
    "build_report",
    "optimize",
    "optimize_frontiers",
    "report",
    "run",
    "run_pipeline",
]
