import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chanfusion.dataset import DatasetConfig, generate  # noqa: E402
from chanfusion.scene import default_scene  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return default_scene(num_antennas=8, max_paths=5, seed=3)


@pytest.fixture(scope="session")
def small_data(small_scene):
    cfg = DatasetConfig(scene=small_scene, n_train=48, n_test=16, t_unit=2, t_p=8, m_fb=6,
                        step=0.02, seed=5)
    return generate(cfg)


_ACCEPTANCE: dict[int, str] = {}


class _Verdict:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc is None else f"{self.detail} {type(exc).__name__}: {exc}".strip()
        line = f"criterion {self.number} [{status}] {self.title}: {detail}"
        _ACCEPTANCE[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as v: ...`` records one PASS/FAIL line for the summary."""
    return _Verdict


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n].replace("\n", " "))
