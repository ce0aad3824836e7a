import threading
import time

import pytest

from rate_in.tasks import run_bounded


def _sleeper(value, delay):
    def job():
        time.sleep(delay)
        return value
    return job


@pytest.mark.parametrize("workers", [1, 2, 4])
def test_results_keep_submission_order(workers):
    # later jobs finish first
    jobs = [_sleeper(i, 0.05 - 0.01 * i) for i in range(5)]
    assert run_bounded(jobs, workers=workers) == [0, 1, 2, 3, 4]


def test_no_jobs():
    assert run_bounded([], workers=3) == []


def test_concurrency_is_bounded():
    lock = threading.Lock()
    active = [0]
    peak = [0]

    def job():
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return True

    assert all(run_bounded([job] * 8, workers=2))
    assert peak[0] <= 2


def test_errors_propagate():
    def boom():
        raise RuntimeError("job failed")

    with pytest.raises(RuntimeError, match="job failed"):
        run_bounded([boom, _sleeper(1, 0.0)], workers=2)
