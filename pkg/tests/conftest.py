import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "kernel exactness",
    2: "calculus correctness",
    3: "oracle equivalence (denoising vs generic minimizer)",
    4: "semilinear benchmark (h=0.088 and h=0.044)",
    5: "linear benchmark rates",
    6: "theory-as-invariants (multiplier, violation, supports)",
    7: "linearized-problem consistency",
    8: "monotone Armijo steps",
}

_LOG = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LOG] = {}


@pytest.fixture(scope="session")
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line; ``n`` may be a label."""
    log = request.config.stash[_LOG]

    def record(n, ok, detail=""):
        log[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_LOG, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        ok, detail = log.get(n, (False, "not evaluated"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    for key, (ok, detail) in log.items():
        if not isinstance(key, int):
            terminalreporter.write_line(f"supplementary {key}: {'PASS' if ok else 'FAIL'}  {detail}")
