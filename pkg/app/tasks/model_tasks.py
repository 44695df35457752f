import logging
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app.core.config import RunConfig
from app.core.exceptions import DataError
from app.db.checkpoints import load_checkpoint, save_checkpoint
from app.db.exports import read_training_log, write_scenarios, write_training_log
from app.db.models import Checkpoint
from app.services.charts import fan_chart, write_svg
from app.services.market_data import build_dataset, conditioning_window
from app.services.scenario_gan import GanTrainer, ScenarioGenerator, diversity_score, path_diversity
from app.services.simulation import historical_scenarios
from app.tasks.data_tasks import RunPaths, decision_day, load_table, test_start_index
from app.worker import run_jobs, task

logger = logging.getLogger(__name__)


def train_seed(
    config: RunConfig,
    out_dir: Path,
    seed: int,
    steps: Optional[int] = None,
    resume: bool = False,
) -> Dict[str, Any]:
    """Train one generator on the training period and write its checkpoint and log."""
    if steps is not None:
        config = config.with_overrides(training_steps=steps)
    paths = RunPaths(Path(out_dir))
    table = load_table(config, out_dir)
    train_table = table.slice_days(0, test_start_index(config, table))
    dataset = build_dataset(train_table, config.wb, config.wf, config.stride)
    if not dataset:
        raise DataError(
            f"Training period of {train_table.n_days} days yields no usable "
            f"{config.wb}+{config.wf} day windows"
        )
    hp = config.gan_hyperparams(table.n_assets)

    checkpoint_path = paths.checkpoint(seed)
    previous: Optional[Checkpoint] = None
    rows: List[Dict[str, float]] = []
    if resume and checkpoint_path.is_file():
        previous = load_checkpoint(checkpoint_path)
        if paths.training_log(seed).is_file():
            logged = read_training_log(paths.training_log(seed))
            rows = [r for r in logged.to_dict("records") if r["step"] <= previous.step]

    trainer = GanTrainer(dataset, hp, seed, table.tickers, resume=previous)
    result = trainer.run(on_checkpoint=lambda ckpt: save_checkpoint(ckpt, checkpoint_path))
    save_checkpoint(result.checkpoint, checkpoint_path)
    rows.extend(result.log)
    write_training_log(rows, paths.training_log(seed))

    return {
        "seed": seed,
        "steps": result.checkpoint.step,
        "windows": len(dataset),
        "checkpoint": str(checkpoint_path),
        "training_log": str(paths.training_log(seed)),
        "final_diversity": result.final_diversity,
        "collapsed": result.collapsed,
    }


def simulate_scenarios(
    config: RunConfig,
    out_dir: Path,
    seed: int,
    ckpt_path: Optional[Path] = None,
    day: Optional[date] = None,
    n: Optional[int] = None,
) -> Dict[str, Any]:
    """Sample scenarios conditioned on the window ending at ``day`` and chart them."""
    paths = RunPaths(Path(out_dir))
    ckpt = load_checkpoint(ckpt_path or paths.checkpoint(seed))
    table = load_table(config, out_dir)
    end_index = decision_day(config, table, day)
    window = conditioning_window(table, end_index, ckpt.hp.wb)

    count = n if n is not None else config.n_scenarios
    scenarios = ScenarioGenerator.from_checkpoint(ckpt).sample(window, count, seed)
    as_of = table.dates[end_index]
    csv_path = write_scenarios(scenarios, paths.scenarios(as_of, seed))
    history = table.prices[:, end_index - ckpt.hp.wb : end_index + 1]
    chart_path = write_svg(fan_chart(scenarios, history), paths.fan_chart(as_of, seed))

    try:
        historical_diversity: Optional[float] = path_diversity(historical_scenarios(table, end_index, ckpt.hp.wf))
    except DataError as exc:
        logger.warning(f"No historical comparison: {exc}")
        historical_diversity = None

    return {
        "seed": seed,
        "date": as_of.isoformat(),
        "n": scenarios.n,
        "rows": scenarios.n * scenarios.paths.shape[1] * scenarios.horizon,
        "diversity": diversity_score(scenarios),
        "path_diversity": path_diversity(scenarios),
        "historical_diversity": historical_diversity,
        "scenarios": str(csv_path),
        "chart": str(chart_path),
    }


def train_seeds(
    config: RunConfig,
    out_dir: Path,
    seeds: Optional[Sequence[int]] = None,
    steps: Optional[int] = None,
    resume: bool = False,
) -> Dict[str, Any]:
    seeds = list(seeds or config.seeds)
    results = run_jobs([lambda seed=seed: train_seed(config, out_dir, seed, steps, resume) for seed in seeds])
    return {"seeds": results}


train = task("train")(train_seeds)
simulate = task("simulate")(simulate_scenarios)
