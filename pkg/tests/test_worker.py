import threading
import time

import pytest

from app.core.exceptions import DataError
from app.worker import TASKS, run_jobs, task


def test_task_wraps_result_and_errors():
    @task("example_ok")
    def ok(x):
        return {"value": x}

    @task("example_fail")
    def fail():
        raise DataError("bad row", row=3)

    assert ok(5) == {"success": True, "command": "example_ok", "value": 5}
    result = fail()
    assert result["success"] is False
    assert result["error_type"] == "data_error"
    assert "bad row" in result["error"]
    assert TASKS["example_ok"] is ok


def test_unknown_errors_are_internal():
    @task("example_crash")
    def crash():
        raise RuntimeError("boom")

    assert crash()["error_type"] == "internal_error"


@pytest.mark.parametrize("workers", [1, 3])
def test_run_jobs_keeps_submission_order(workers):
    def job(i):
        time.sleep(0.01 * (3 - i))
        return i, threading.current_thread().name

    results = run_jobs([lambda i=i: job(i) for i in range(3)], max_workers=workers)
    assert [i for i, _ in results] == [0, 1, 2]
    if workers == 1:
        assert all(name == threading.current_thread().name for _, name in results)


def test_run_jobs_reraises():
    def broken():
        raise DataError("nope")

    with pytest.raises(DataError):
        run_jobs([lambda: 1, broken], max_workers=2)
