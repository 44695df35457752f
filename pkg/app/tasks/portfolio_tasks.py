"""
Optimization, backtest and report commands, plus the full pipeline.

Backtests cover every risk level of the risk-level strategies so that the
dominance metrics see the whole grid; ledgers are only exported for the
configured risk settings.
"""

import logging
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import RunConfig
from app.core.exceptions import ConfigError, DataError
from app.db.checkpoints import load_checkpoint
from app.db.exports import (
    read_frame,
    read_level_table,
    write_dominance,
    write_frame,
    write_frontier,
    write_ledger,
    write_level_table,
    write_reports,
)
from app.db.models import BacktestLedger, PriceTable, ReturnsSample, RiskGrid, StrategySpec
from app.services.backtest import (
    BacktestDeps,
    PaganDecider,
    check_ledger,
    dominance_metrics,
    performance_report,
    run_backtest,
)
from app.services.charts import risk_return_chart, write_svg
from app.services.market_data import conditioning_window
from app.services.portfolio_opt import (
    frontier_rows,
    markowitz_estimate,
    markowitz_frontier,
    model_objective,
    nsga2_optimize,
    safe_risk_grid,
    select_by_risk,
)
from app.services.scenario_gan import ScenarioGenerator
from app.services.simulation import ScenarioObjective, historical_scenarios, scenario_returns
from app.tasks.data_tasks import RunPaths, decision_day, ingest_dataset, load_table, test_start_index
from app.tasks.model_tasks import train_seeds
from app.worker import run_jobs, task

logger = logging.getLogger(__name__)

LEVEL_KINDS = ("pagan", "markowitz", "default")


def _generator(paths: RunPaths, seed: int) -> ScenarioGenerator:
    checkpoint_path = paths.checkpoint(seed)
    if not checkpoint_path.is_file():
        raise DataError(f"No checkpoint for seed {seed} at {checkpoint_path}; run train first")
    return ScenarioGenerator.from_checkpoint(load_checkpoint(checkpoint_path))


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def _scenario_frontier(
    paths: RunPaths,
    kind: str,
    as_of: date,
    seed: int,
    sample: ReturnsSample,
    grid: RiskGrid,
    config: RunConfig,
    table: PriceTable,
) -> Tuple[int, str]:
    """NSGA-II on scenario estimates, one pick per risk level; (front size, file)."""
    objective = ScenarioObjective(sample)
    pareto = nsga2_optimize(objective, table.n_assets, config.nsga_params(), seed)
    chosen = select_by_risk(pareto, grid)
    returns, variances = frontier_rows(chosen, objective)
    path = write_frontier(paths.frontier(kind, as_of, seed), grid, chosen, returns, variances, table.tickers)
    return len(pareto), str(path)


def optimize_frontiers(
    config: RunConfig,
    out_dir: Path,
    seed: int,
    day: Optional[date] = None,
) -> Dict[str, Any]:
    """Markowitz and scenario-based frontiers over the risk grid as of ``day``."""
    paths = RunPaths(Path(out_dir))
    table = load_table(config, out_dir)
    end_index = decision_day(config, table, day)
    as_of = table.dates[end_index]

    model = markowitz_estimate(table.slice_days(0, end_index + 1), config.horizon)
    grid = safe_risk_grid(model.r_max, config.z_levels)
    frontier = markowitz_frontier(model, grid)
    returns, variances = frontier_rows(frontier, model_objective(model))
    files = {
        "markowitz": str(
            write_frontier(paths.frontier("markowitz", as_of, seed), grid, frontier, returns, variances, table.tickers)
        )
    }

    front_size = 0
    if "pagan" in config.strategies:
        generator = _generator(paths, seed)
        window = conditioning_window(table, end_index, generator.generator.hp.wb)
        sample = scenario_returns(generator.sample(window, config.n_scenarios, seed), config.horizon)
        front_size, files["pagan"] = _scenario_frontier(paths, "pagan", as_of, seed, sample, grid, config, table)

    try:
        history = historical_scenarios(table, end_index, config.wf)
    except DataError as exc:
        logger.warning(f"Skipping the historical frontier: {exc}")
    else:
        sample = scenario_returns(history, config.horizon)
        _, files["historical"] = _scenario_frontier(paths, "historical", as_of, seed, sample, grid, config, table)

    return {
        "seed": seed,
        "date": as_of.isoformat(),
        "r_max": model.r_max,
        "levels": grid.levels,
        "front_size": front_size,
        "frontiers": files,
    }


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


def _backtest_specs(config: RunConfig, assets: int) -> List[StrategySpec]:
    specs = []
    for kind in config.strategies:
        if kind == "buy_and_hold":
            specs.extend(StrategySpec(kind=kind, horizon=config.horizon, asset=i) for i in range(assets))
            continue
        specs.extend(
            StrategySpec(kind=kind, risk_level=level, horizon=config.horizon, cadence=config.cadence)
            for level in range(1, config.z_levels + 1)
        )
    return specs


def backtest_seed(config: RunConfig, out_dir: Path, seed: int) -> Dict[str, Any]:
    paths = RunPaths(Path(out_dir))
    table = load_table(config, out_dir)
    test_start = test_start_index(config, table)
    model = markowitz_estimate(table.slice_days(0, test_start), config.horizon)
    grid = safe_risk_grid(model.r_max, config.z_levels)
    deps = BacktestDeps(model=model, grid=grid)
    if "markowitz" in config.strategies:
        deps.frontier = markowitz_frontier(model, grid)
    if "pagan" in config.strategies:
        deps.pagan = PaganDecider(
            _generator(paths, seed), grid, config.nsga_params(), config.n_scenarios, config.horizon, seed
        )

    specs = _backtest_specs(config, table.n_assets)
    ledgers: List[BacktestLedger] = run_jobs(
        [lambda spec=spec: run_backtest(table, spec, deps, seed, test_start) for spec in specs]
    )
    for ledger in ledgers:
        check_ledger(ledger, table, test_start, tol=1e-12)

    out = paths.backtest_dir(seed)
    exported = set(config.risk_settings)
    reports = []
    by_kind: Dict[str, list] = {}
    for spec, ledger in zip(specs, ledgers):
        report = performance_report(ledger)
        if spec.kind in LEVEL_KINDS:
            by_kind.setdefault(spec.kind, []).append(report)
        if spec.kind == "buy_and_hold" or spec.risk_level in exported:
            write_ledger(ledger, out / f"ledger_{spec.label}.csv")
            reports.append(report)
    for kind, level_reports in by_kind.items():
        write_level_table(out / f"levels_{kind}.csv", kind, level_reports, table.tickers)
    write_reports(reports, out / "report.csv", seed)

    logger.info(f"Seed {seed}: backtested {len(specs)} strategies from {table.dates[test_start]}")
    return {
        "seed": seed,
        "test_start": table.dates[test_start].isoformat(),
        "test_days": table.n_days - test_start,
        "strategies": len(specs),
        "reports": [r.model_dump() for r in reports],
        "directory": str(out),
    }


def backtest_seeds(config: RunConfig, out_dir: Path, seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    results = [backtest_seed(config, out_dir, seed) for seed in (seeds or config.seeds)]
    return {"seeds": results}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _level_points(path: Path) -> List[Tuple[float, float]]:
    """(annual return, volatility) per risk level, ordered by level."""
    frame = read_level_table(path).sort_values("risk_level", kind="stable")
    return list(zip(frame["annual_return"].astype(float), frame["volatility"].astype(float)))


def median_seed(per_seed: Dict[int, Tuple[float, float]]) -> int:
    """Seed holding the (lower) median PAGAN2M; ties go to the smaller seed."""
    ordered = sorted(per_seed, key=lambda s: (per_seed[s][0], s))
    return ordered[(len(ordered) - 1) // 2]


def build_report(config: RunConfig, out_dir: Path, seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    if "pagan" not in config.strategies or "markowitz" not in config.strategies:
        raise ConfigError("report compares the pagan and markowitz strategies; enable both")
    paths = RunPaths(Path(out_dir))
    seeds = list(seeds or config.seeds)

    per_seed: Dict[int, Tuple[float, float]] = {}
    frames = []
    for seed in seeds:
        directory = paths.backtest_dir(seed)
        per_seed[seed] = dominance_metrics(
            _level_points(directory / "levels_pagan.csv"),
            _level_points(directory / "levels_markowitz.csv"),
        )
        frames.append(read_frame(directory / "report.csv", ["seed", "strategy", "setting"]))

    summary = {}
    for name, reduce in (("min", np.min), ("median", np.median), ("max", np.max)):
        summary[name] = {
            "pagan2m": float(reduce([v[0] for v in per_seed.values()])),
            "m2pagan": float(reduce([v[1] for v in per_seed.values()])),
        }
    representative = median_seed(per_seed)

    report_dir = paths.report_dir
    dominance_path = write_dominance(report_dir / "dominance.csv", per_seed, summary)
    summary_path = write_frame(pd.concat(frames, ignore_index=True), report_dir / "summary.csv")

    curves = {}
    for kind in config.strategies:
        level_path = paths.backtest_dir(representative) / f"levels_{kind}.csv"
        if kind in LEVEL_KINDS and level_path.is_file():
            curves[kind] = [(vol, ret) for ret, vol in _level_points(level_path)]
    chart_path = write_svg(
        risk_return_chart(curves, f"risk / return per level, seed {representative}"),
        report_dir / "risk_return.svg",
    )

    return {
        "dominance": {str(seed): {"pagan2m": v[0], "m2pagan": v[1]} for seed, v in sorted(per_seed.items())},
        "summary": summary,
        "median_seed": representative,
        "settings": pd.concat(frames, ignore_index=True).replace({np.nan: None}).to_dict("records"),
        "files": [str(dominance_path), str(summary_path), str(chart_path)],
    }


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def run_pipeline(config: RunConfig, out_dir: Path, steps: Optional[int] = None) -> Dict[str, Any]:
    """ingest, train every seed, backtest every seed, report."""
    ingested = ingest_dataset(config, out_dir)
    if "pagan" in config.strategies:
        trained = train_seeds(config, out_dir, steps=steps)["seeds"]
    else:
        trained = []
    backtested = backtest_seeds(config, out_dir)
    result: Dict[str, Any] = {"ingest": ingested, "train": trained, "backtest": backtested["seeds"]}
    if "pagan" in config.strategies and "markowitz" in config.strategies:
        result["report"] = build_report(config, out_dir)
    return result


optimize = task("optimize")(optimize_frontiers)
backtest = task("backtest")(backtest_seeds)
report = task("report")(build_report)
run = task("run")(run_pipeline)
