import numpy as np
import pytest

from schedq.env import EnvConfig

P3 = [[0.0, 1.0, 2.0], [3.0, 0.0, 4.0], [5.0, 6.0, 0.0]]


def static_config(buffers, P=P3, weights=None, **kw):
    n = len(buffers)
    kw.setdefault("w_bounds", (0.5, 4.0))
    kw.setdefault("p_max", 10.0)
    return EnvConfig(
        n_users=n,
        initial_buffers=buffers,
        initial_weights=np.ones(n) if weights is None else weights,
        initial_penalty_matrix=P,
        **kw,
    ).validate()


@pytest.fixture
def env3():
    return static_config([2.0, 1.0, 1.0])


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``record(number, name, passed, detail)`` prints and stores one verdict line."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {name}  ({detail})"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
