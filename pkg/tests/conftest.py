import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def zipf_stream(n, a=1.1, support=10_000, seed=0):
    """Bounded Zipf draws: item r has probability proportional to r**-a."""
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, support + 1, dtype=np.float64)
    p = ranks ** -a
    p /= p.sum()
    return rng.choice(support, size=n, p=p).astype(np.int64)


# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
