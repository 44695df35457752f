import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

from app.core.config import settings
from app.core.exceptions import create_error_response

logger = logging.getLogger(__name__)

T = TypeVar("T")

TaskResult = Dict[str, Any]

# Command name -> task function, filled by the @task decorator
TASKS: Dict[str, Callable[..., TaskResult]] = {}


def task(name: str) -> Callable[[Callable[..., TaskResult]], Callable[..., TaskResult]]:
    """
    Register a command body.

    The wrapped function returns its result dict with ``success`` and
    ``command`` set; any exception becomes a standardized error response.
    """

    def decorator(func: Callable[..., TaskResult]) -> Callable[..., TaskResult]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> TaskResult:
            logger.info(f"Starting {name}")
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                return create_error_response(name, exc)
            logger.info(f"Finished {name}")
            return {"success": True, "command": name, **result}

        TASKS[name] = wrapper
        return wrapper

    return decorator


def run_jobs(jobs: Sequence[Callable[[], T]], max_workers: Optional[int] = None) -> List[T]:
    """
    Run independent jobs and return their results in submission order.

    With one worker (the default, from MAX_WORKERS) jobs run sequentially in
    the calling thread. The first failing job's exception is re-raised.
    """
    workers = max(1, max_workers if max_workers is not None else settings.MAX_WORKERS)
    if workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]

    logger.info(f"Running {len(jobs)} jobs on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="toolkit") as pool:
        futures = [pool.submit(job) for job in jobs]
        return [future.result() for future in futures]
