"""
Command-line driver: ``python -m app.main <command> [flags]``.

Exit code is 0 when the command wrote all of its outputs, 1 otherwise.
"""

import argparse
import logging
import sys
from datetime import date
from typing import Any, Dict, List, Optional

from rich import box
from rich.console import Console
from rich.table import Table

import app.tasks  # noqa: F401 (registers the commands)
from app.core.config import RunConfig, settings
from app.core.exceptions import ConfigError, create_error_response
from app.worker import TASKS

logger = logging.getLogger(__name__)

console = Console()


def configure_logging() -> None:
    logging.basicConfig(level=settings.LOG_LEVEL.upper(), format=settings.LOG_FORMAT)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--out", help="output directory (overrides PAGAN_OUTPUT_DIR and output_dir)")
    common.add_argument(
        "--seed", type=int, action="append", help="model seed; repeat for several (default: config seeds)"
    )
    common.add_argument("--csv", help="price CSV (date column plus one column per ticker)")
    common.add_argument("--synth", type=int, metavar="ASSETS", help="synthetic correlated market with ASSETS assets")

    parser = argparse.ArgumentParser(prog="app.main", description="Scenario-based portfolio toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest_cmd = commands.add_parser("ingest", parents=[common], help="validate and store the price table")
    ingest_cmd.add_argument("--sanity", action="store_true", help="flag day-to-day moves above x5")

    train_cmd = commands.add_parser("train", parents=[common], help="train the scenario generator")
    train_cmd.add_argument("--steps", type=int, help="training steps (0 writes the initial networks)")
    train_cmd.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")

    simulate_cmd = commands.add_parser("simulate", parents=[common], help="sample scenarios and a fan chart")
    simulate_cmd.add_argument("--ckpt", help="checkpoint file (default: the seed's checkpoint)")
    simulate_cmd.add_argument("--date", type=date.fromisoformat, help="last conditioning day, YYYY-MM-DD")
    simulate_cmd.add_argument("--n", type=int, help="number of scenarios (default: n_scenarios)")

    optimize_cmd = commands.add_parser("optimize", parents=[common], help="frontiers over the risk grid")
    optimize_cmd.add_argument("--date", type=date.fromisoformat, help="decision day, YYYY-MM-DD")

    commands.add_parser("backtest", parents=[common], help="backtest every strategy and risk level")
    commands.add_parser("report", parents=[common], help="dominance metrics across seeds")

    run_cmd = commands.add_parser("run", parents=[common], help="ingest, train, backtest and report")
    run_cmd.add_argument("--steps", type=int, help="training steps per seed")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    elif args.csv:
        config = RunConfig.from_mapping({"csv": args.csv})
    elif args.synth is not None:
        config = RunConfig.from_mapping({"synth_assets": str(args.synth)})
    else:
        raise ConfigError("a run configuration is required: pass --config, --csv or --synth")
    config = config.with_source(csv=args.csv, synth_assets=args.synth)
    if args.seed:
        config = config.with_overrides(seeds=list(args.seed))
    return config


# Task keyword <- command-line flag, per command.
TASK_OPTIONS: Dict[str, Dict[str, str]] = {
    "ingest": {"sanity": "sanity"},
    "train": {"steps": "steps", "resume": "resume"},
    "simulate": {"ckpt_path": "ckpt", "day": "date", "n": "n"},
    "optimize": {"day": "date"},
    "backtest": {},
    "report": {},
    "run": {"steps": "steps"},
}

# Commands that work on a single seed (the first configured one).
SINGLE_SEED = ("simulate", "optimize")


def dispatch(args: argparse.Namespace) -> Dict[str, Any]:
    try:
        config = load_config(args)
    except Exception as exc:
        return create_error_response(args.command, exc)
    out_dir = config.resolve_output_dir(args.out)

    command = TASKS[args.command]
    options = {keyword: getattr(args, flag) for keyword, flag in TASK_OPTIONS[args.command].items()}
    if args.command in SINGLE_SEED:
        return command(config, out_dir, config.seeds[0], **options)
    return command(config, out_dir, **options)


# ---------------------------------------------------------------------------
# Console summaries
# ---------------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _key_values(title: str, values: Dict[str, Any]) -> Table:
    table = Table(title=title, box=box.SIMPLE_HEAD, show_header=False)
    table.add_column("key", style="bold")
    table.add_column("value")
    for key, value in values.items():
        if not isinstance(value, (dict, list)):
            table.add_row(key, _fmt(value))
    return table


def _settings_table(rows: List[Dict[str, Any]]) -> Table:
    table = Table(title="Risk settings", box=box.SIMPLE_HEAD)
    for column in ("seed", "strategy", "setting", "annual_return", "volatility", "sharpe", "final_value"):
        table.add_column(column, justify="left" if column in ("strategy", "setting") else "right")
    for row in rows:
        table.add_row(*(_fmt(row.get(c)) for c in ("seed", "strategy", "setting", "annual_return",
                                                    "volatility", "sharpe", "final_value")))
    return table


def _dominance_table(result: Dict[str, Any]) -> Table:
    table = Table(title=f"Dominance (median seed {result['median_seed']})", box=box.SIMPLE_HEAD)
    table.add_column("seed")
    table.add_column("PAGAN2M %", justify="right")
    table.add_column("M2PAGAN %", justify="right")
    for seed, values in result["dominance"].items():
        table.add_row(seed, f"{values['pagan2m']:.1f}", f"{values['m2pagan']:.1f}")
    for name, values in result["summary"].items():
        table.add_row(name, f"{values['pagan2m']:.1f}", f"{values['m2pagan']:.1f}", style="bold")
    return table


def render(result: Dict[str, Any]) -> None:
    command = result.get("command", "")
    if not result.get("success"):
        console.print(f"[bold red]{command} failed[/] ({result.get('error_type')}): {result.get('error')}")
        return

    if command == "ingest":
        console.print(_key_values("Dataset", result))
        for spike in result["spikes"]:
            console.print(f"[yellow]spike[/] {spike['ticker']} {spike['date']} x{spike['ratio']:.3f}")
    elif command in ("train", "backtest"):
        for entry in result["seeds"]:
            console.print(_key_values(f"{command} seed {entry['seed']}", entry))
    elif command == "report":
        console.print(_dominance_table(result))
        console.print(_settings_table(result["settings"]))
    elif command == "run":
        console.print(_key_values("Dataset", result["ingest"]))
        if "report" in result:
            console.print(_dominance_table(result["report"]))
            console.print(_settings_table(result["report"]["settings"]))
    else:
        console.print(_key_values(command, result))
        for name, path in result.get("frontiers", {}).items():
            console.print(f"{name} frontier: {path}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    result = dispatch(args)
    render(result)
    return 0 if result.get("success") else 1


if __name__ == "__main__":
    sys.exit(main())
