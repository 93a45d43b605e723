import os

import pytest

os.environ.setdefault("DDESSM_NUM_THREADS", "1")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}

CRITERIA = {
    1: "Hutchinson dominant roots",
    2: "oracle coefficient table and O(|z|^4) residual",
    3: "Hutchinson data-driven model",
    4: "two-neuron data-driven model",
    5: "Mackey-Glass dimension, Lyapunov exponent, PDF",
    6: "Rossler-delay dimension, boundedness, PDF",
    7: "traffic Hopf point and unseen-delay predictions",
    8: "Cushing folds and limit-cycle counts",
    9: "property suites",
    10: "micro-chaos ZOH pipeline",
}


@pytest.fixture
def record():
    def _record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
        else:
            tr.write_line(f"criterion {n:2d} NOT RUN: {title}")
