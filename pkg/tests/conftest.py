import numpy as np
import pytest

from trajdp.histogram import build_from_cell_paths
from trajdp.trajectories import gen_skewed_paths

# Fixed desk fixture shared by the synthesis, evaluation and acceptance tests.
# Chosen once, before any mechanism comparison was run against it.
SKEWED_SIDE = 16
SKEWED_N = 1000
SKEWED_LEN = 10
SKEWED_SEED = 7


def skewed_paths(n=SKEWED_N, side=SKEWED_SIDE, seed=SKEWED_SEED):
    return gen_skewed_paths(n, SKEWED_LEN, side, (side / 2, side / 2), 1.0, seed)


@pytest.fixture(scope="session")
def skewed_hist():
    return build_from_cell_paths(skewed_paths(), SKEWED_SIDE, SKEWED_SIDE)


@pytest.fixture(scope="session")
def skewed_hist_8():
    return build_from_cell_paths(skewed_paths(n=300, side=8), 8, 8)


def random_histogram(rng: np.random.Generator, rows: int, cols: int, scale: float = 10.0):
    from trajdp.histogram import SpatialHistogram

    return SpatialHistogram(
        rng.uniform(0, scale, (rows, cols)),
        rng.uniform(0, scale, (rows, cols - 1)),
        rng.uniform(0, scale, (rows - 1, cols)),
        float(rng.integers(1, 100)),
    )


def brute_force_count(paths, q):
    r0, r1, c0, c1 = q
    return sum(any(r0 <= r <= r1 and c0 <= c <= c1 for r, c in p) for p in paths)


def single_run(path, q):
    r0, r1, c0, c1 = q
    inside = [r0 <= r <= r1 and c0 <= c <= c1 for r, c in path]
    runs = sum(1 for k, v in enumerate(inside) if v and (k == 0 or not inside[k - 1]))
    return runs <= 1


# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
