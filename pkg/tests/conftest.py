import numpy as np
import pytest

from radarvmp.config import DEFAULT_CONFIG
from radarvmp.signal import RadarNode


@pytest.fixture
def cfg():
    return DEFAULT_CONFIG


@pytest.fixture
def radar():
    return RadarNode.from_config([0.0, 0.0], DEFAULT_CONFIG, orientation=0.0, radar_id=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_visible_state(rng, radar, r_lo=10.0, r_hi=180.0, max_abs_u=0.9):
    """Random 4-state inside the radar's field of view (local frame -> global)."""
    r = rng.uniform(r_lo, r_hi)
    u = rng.uniform(-max_abs_u, max_abs_u)
    local = np.array([r * u, r * np.sqrt(1 - u * u)])
    pos = radar.position + radar.rotation.T @ local
    return np.array([pos[0], pos[1], rng.normal(), rng.normal()])


ACCEPTANCE_LINES: list[str] = []


class CriterionRecorder:
    """Records one pass/fail line per acceptance criterion."""

    def check(self, number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
