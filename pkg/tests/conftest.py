import numpy as np
import pytest
from hypothesis import strategies as st

from ssdm import geometry as geo
from ssdm.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(12345)


def random_states(seed: int, d: int, size: int) -> np.ndarray:
    return geo.haar_state(d, RngStream(seed), size)


seeds = st.integers(min_value=0, max_value=2**63 - 1)
dims = st.sampled_from([2, 3, 4, 8, 16])
phases = st.floats(min_value=-np.pi, max_value=np.pi, allow_nan=False)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one check; a criterion passes only if all its checks do."""
    table = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        table.setdefault(number, []).append((bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        checks = table[number]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
