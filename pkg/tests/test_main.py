import xml.etree.ElementTree as ET

import pandas as pd
import pytest

from app.core.config import RunConfig
from app.main import TASK_OPTIONS, build_parser, main
from app.worker import TASKS
from app.tasks import ingest, optimize, run_pipeline, simulate
from app.tasks.portfolio_tasks import median_seed

TINY_RUN = """
synth_assets=2
synth_days=120
synth_seed=5
synth_correlation=0.3
test_days=15
wb=8
wf=4
horizon=4
training_steps=2
batch_size=4
n_critic=1
log_every=1
checkpoint_every=0
learning_rate=0.001
z_levels=3
risk_settings=1,3
n_scenarios=8
population=8
generations=2
seeds=0,1
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.env"
    path.write_text(TINY_RUN)
    return path


def test_missing_configuration_exits_with_error(tmp_path):
    assert main(["ingest", "--out", str(tmp_path)]) == 1


def test_malformed_csv_exits_with_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,AAA\n2020-01-02,10\n2020-01-03,oops\n")
    assert main(["ingest", "--csv", str(bad), "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out" / "dataset.csv").exists()


def test_ingest_synthetic_market_is_deterministic(tmp_path, run_config):
    assert main(["ingest", "--config", str(run_config), "--out", str(tmp_path / "a")]) == 0
    frame = pd.read_csv(tmp_path / "a" / "dataset.csv")
    assert list(frame.columns) == ["date", "SYN1", "SYN2"]
    assert len(frame) == 120

    config = RunConfig.load(run_config)
    first = ingest(config, tmp_path / "b")
    second = ingest(config, tmp_path / "c")
    assert first["success"] and first["digest"] == second["digest"]
    other = ingest(config.with_overrides(synth_seed=6), tmp_path / "d")
    assert other["digest"] != first["digest"]


def test_csv_flag_replaces_config_source(tmp_path, run_config):
    prices = tmp_path / "prices.csv"
    prices.write_text("date,AAA\n2020-01-02,10\n2020-01-03,11\n")
    assert main(["ingest", "--config", str(run_config), "--csv", str(prices), "--out", str(tmp_path)]) == 0
    assert list(pd.read_csv(tmp_path / "dataset.csv").columns) == ["date", "AAA"]


def test_every_command_is_a_registered_task():
    parser = build_parser()
    for command in TASK_OPTIONS:
        assert parser.parse_args([command, "--synth", "2"]).command == command
    assert set(TASK_OPTIONS) <= set(TASKS)


def test_dispatch_goes_through_the_task_registry(tmp_path, run_config, monkeypatch):
    calls = []

    def fake_simulate(config, out_dir, seed, **options):
        calls.append((seed, options))
        return {"success": True, "command": "simulate"}

    monkeypatch.setitem(TASKS, "simulate", fake_simulate)
    args = ["simulate", "--config", str(run_config), "--out", str(tmp_path), "--seed", "3", "--n", "7"]
    assert main(args) == 0
    assert calls == [(3, {"ckpt_path": None, "day": None, "n": 7})]


def test_later_commands_read_the_ingested_dataset(tmp_path, run_config):
    config = RunConfig.load(run_config).with_overrides(strategies=["markowitz", "buy_and_hold"])
    other = config.with_overrides(synth_seed=6)
    out = tmp_path / "out"
    assert ingest(config, out)["success"]

    ingested = optimize(other, out, 0)
    direct = optimize(config, tmp_path / "direct", 0)
    regenerated = optimize(other, tmp_path / "other", 0)
    assert ingested["success"] and direct["success"] and regenerated["success"]
    assert ingested["r_max"] == pytest.approx(direct["r_max"], rel=1e-9)
    assert ingested["r_max"] != pytest.approx(regenerated["r_max"], rel=1e-9)


@pytest.mark.slow
def test_train_zero_steps_then_simulate(tmp_path, run_config):
    out = tmp_path / "out"
    args = ["--config", str(run_config), "--out", str(out), "--seed", "0"]
    assert main(["train", *args, "--steps", "0"]) == 0
    assert (out / "checkpoints" / "ckpt_seed0.bin").is_file()

    assert main(["simulate", *args, "--n", "5"]) == 0
    result = simulate(RunConfig.load(run_config), out, 0, n=5)
    assert result["path_diversity"] > 0
    assert result["historical_diversity"] > 0
    (scenarios,) = list((out / "scenarios").glob("scenarios_*_seed0.csv"))
    assert len(pd.read_csv(scenarios)) == 5 * 2 * 4
    (chart,) = list((out / "scenarios").glob("fan_*_seed0.svg"))
    assert ET.parse(chart).getroot().tag.endswith("svg")


@pytest.mark.slow
def test_simulate_without_checkpoint_fails(tmp_path, run_config):
    assert main(["simulate", "--config", str(run_config), "--out", str(tmp_path)]) == 1


@pytest.mark.slow
def test_train_resume_extends_log(tmp_path, run_config):
    out = tmp_path / "out"
    args = ["--config", str(run_config), "--out", str(out), "--seed", "0"]
    assert main(["train", *args, "--steps", "1"]) == 0
    assert main(["train", *args, "--steps", "3", "--resume"]) == 0
    log = pd.read_csv(out / "training" / "log_seed0.csv")
    assert log["step"].tolist() == [1, 2, 3]


@pytest.mark.slow
def test_optimize_writes_every_frontier(tmp_path, run_config):
    out = tmp_path / "out"
    assert main(["train", "--config", str(run_config), "--out", str(out), "--steps", "0"]) == 0
    result = optimize(RunConfig.load(run_config), out, 0)
    assert result["success"], result
    for kind in ("markowitz", "pagan", "historical"):
        frame = pd.read_csv(result["frontiers"][kind])
        assert len(frame) == 3
        assert frame["zeta"].tolist() == [1, 2, 3]
        weights = frame[["w_SYN1", "w_SYN2"]].sum(axis=1)
        assert weights.tolist() == pytest.approx([1.0, 1.0, 1.0], abs=1e-9)


def test_report_before_backtest_fails(tmp_path, run_config):
    assert main(["report", "--config", str(run_config), "--out", str(tmp_path)]) == 1


@pytest.mark.slow
def test_full_pipeline(tmp_path, run_config):
    out = tmp_path / "out"
    assert main(["run", "--config", str(run_config), "--out", str(out), "--steps", "1"]) == 0

    for seed in (0, 1):
        directory = out / "backtest" / f"seed{seed}"
        assert (directory / "ledger_pagan_z1.csv").is_file()
        assert (directory / "ledger_markowitz_z3.csv").is_file()
        assert not (directory / "ledger_default_z2.csv").exists()
        levels = pd.read_csv(directory / "levels_pagan.csv")
        assert levels["risk_level"].tolist() == [1, 2, 3]
        ledger = pd.read_csv(directory / "ledger_default_z1.csv")
        assert len(ledger) == 15
        assert ledger["value"].iloc[0] == 1.0

    dominance = pd.read_csv(out / "report" / "dominance.csv", dtype={"seed": str})
    assert dominance["seed"].tolist() == ["0", "1", "min", "median", "max"]
    assert ((dominance["pagan2m"] + dominance["m2pagan"]) <= 100.0).all()
    ET.parse(out / "report" / "risk_return.svg")


@pytest.mark.slow
def test_pipeline_without_pagan_skips_training(tmp_path, run_config):
    config = RunConfig.load(run_config).with_overrides(strategies=["markowitz", "buy_and_hold"])
    result = run_pipeline(config, tmp_path)
    assert result["train"] == []
    assert "report" not in result
    assert not (tmp_path / "checkpoints").exists()
    assert (tmp_path / "backtest" / "seed0" / "ledger_buy_and_hold_1.csv").is_file()


def test_median_seed_picks_lower_median():
    per_seed = {0: (50.0, 10.0), 1: (20.0, 0.0), 2: (80.0, 0.0), 3: (50.0, 5.0)}
    assert median_seed(per_seed) == 0
    assert median_seed({7: (10.0, 0.0)}) == 7
