import numpy as np
import pytest

from flowsynth.fixtures import sample_path
from flowsynth.model import StanConfig, StanModel
from flowsynth.schema import AttributeSchema, read_frame


@pytest.fixture(scope="session")
def netflow():
    return AttributeSchema.netflow()


@pytest.fixture(scope="session")
def train_frame(netflow):
    frame, _ = read_frame(sample_path("train"), netflow)
    return frame


@pytest.fixture(scope="session")
def test_frame(netflow):
    frame, _ = read_frame(sample_path("test"), netflow)
    return frame


@pytest.fixture(scope="session")
def tiny_models(train_frame, netflow):
    """Two-epoch desk models on 600 rows: enough for plumbing, masks and determinism."""
    out = {}
    for mask in "AB":
        cfg = StanConfig(mask=mask, trunk="desk", epochs=2, seed=3)
        out[mask] = StanModel.train(train_frame.iloc[:600], netflow, cfg, time_format="datetime")
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, echoed in the terminal summary so they survive output capture
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, checks: dict, detail: str = ""):
        failed = [name for name, ok in checks.items() if not ok]
        line = f"criterion {number:2d}: {'PASS' if not failed else 'FAIL'}  {detail}"
        if failed:
            line += f"  (failed: {', '.join(failed)})"
        ACCEPTANCE[number] = line
        print(line)
        assert not failed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
