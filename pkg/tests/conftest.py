import numpy as np
import pytest
import torch

from steve.data import Dataset, SynthConfig, generate_synthetic


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_synth():
    """Two weeks on a 4x4 grid: enough history for the default window."""
    cfg = SynthConfig(grid_shape=(4, 4), days=14, seed=3)
    return generate_synthetic(cfg)


def random_dataset(rng: np.random.Generator, channels: int | None = None) -> Dataset:
    H, W = (int(v) for v in rng.integers(1, 5, size=2))
    C = channels or int(rng.integers(1, 4))
    T = int(rng.integers(1, 60))
    flows = rng.gamma(2.0, 10.0, size=(T, H * W, C)).astype(np.float32)
    return Dataset(flows, interval_minutes=30, start_timestamp="2024-03-01T00:00:00", grid_shape=(H, W))


# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    def _report(number: int, title: str, ok: bool, detail: str) -> None:
        CRITERIA[number] = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} ({detail})"
        print(CRITERIA[number])
        assert ok, CRITERIA[number]
    return _report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
