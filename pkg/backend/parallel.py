import logging
from typing import Any, Callable, List, Sequence

from joblib import Parallel, delayed

logger = logging.getLogger(__name__)


def run_parallel(
    func: Callable[..., Any], tasks: Sequence[Sequence[Any]], n_jobs: int = 1
) -> List[Any]:
    """
    Evaluate func(*task) for every task, returning results in task order.

    Args:
        func: Pure function of the task arguments
        tasks: Argument tuples
        n_jobs: joblib worker count; 1 runs serially in-process

    Returns:
        Results in the order of tasks regardless of completion order
    """
    if n_jobs == 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]
    logger.debug("Dispatching %d tasks to %d workers", len(tasks), n_jobs)
    return Parallel(n_jobs=n_jobs)(delayed(func)(*task) for task in tasks)
