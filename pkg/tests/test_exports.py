import xml.etree.ElementTree as ET

import numpy as np
import pytest

from app.core.exceptions import DataError
from app.db.exports import read_frame, read_ledger, read_scenarios, setting_name, write_ledger, write_scenarios
from app.db.models import ScenarioSet
from app.services.backtest import FixedAllocator, simulate_ledger
from app.services.charts import fan_chart, risk_return_chart, write_svg
from conftest import make_table


def test_setting_names():
    assert [setting_name(z) for z in (5, 13, 21)] == ["defensive", "balanced", "aggressive"]
    assert setting_name(7) == "z7"
    assert setting_name(None) == "-"


def test_ledger_file_reproduces_values(tmp_path):
    table = make_table([[10.0, 10.3, 9.7, 10.1], [5.0, 5.1, 5.3, 5.2]], tickers=("AAA", "BBB"))
    ledger = simulate_ledger(table, FixedAllocator(np.array([0.25, 0.75])), 0, name="fixed")
    restored = read_ledger(write_ledger(ledger, tmp_path / "ledger.csv"))
    np.testing.assert_array_equal(restored.values, ledger.values)
    np.testing.assert_array_equal(restored.weights, ledger.weights)
    assert restored.dates == ledger.dates
    assert restored.tickers == ("AAA", "BBB")


def test_scenarios_long_format(tmp_path):
    paths = np.arange(1.0, 13.0).reshape(2, 2, 3)
    scenarios = ScenarioSet(anchor=np.array([1.0, 4.0]), paths=paths, tickers=("ZZZ", "AAA"))
    path = write_scenarios(scenarios, tmp_path / "s.csv")
    restored = read_scenarios(path, scenarios.anchor)
    assert restored.tickers == ("ZZZ", "AAA")
    np.testing.assert_array_equal(restored.paths, paths)


def test_read_frame_errors(tmp_path):
    with pytest.raises(DataError):
        read_frame(tmp_path / "missing.csv")
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_frame(path, ["a", "c"])


def test_charts_are_well_formed_svg(tmp_path):
    rng = np.random.default_rng(0)
    scenarios = ScenarioSet(anchor=np.array([10.0, 20.0]), paths=10.0 + rng.uniform(size=(30, 2, 5)) * [[1.0], [2.0]])
    fan = write_svg(fan_chart(scenarios, history=rng.uniform(9, 11, size=(2, 6))), tmp_path / "fan.svg")
    root = ET.parse(fan).getroot()
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2 * (1 + 30 + 3)

    curves = {"pagan": [(0.1, 0.05), (0.2, 0.09)], "markowitz": [(0.1, 0.04), (0.2, 0.08)]}
    chart = write_svg(risk_return_chart(curves), tmp_path / "rr.svg")
    assert len(ET.parse(chart).getroot().findall("{http://www.w3.org/2000/svg}polyline")) == 2
