"""Session-wide energy bookkeeping and the acceptance summary.

Every accepted implicit Euler step (obstacle or penalty) and every trajectory
ledger produced anywhere in the session is recorded, so the dissipation
criterion can be judged over the whole run rather than a single example.
"""

import numpy as np
import pytest

import memsvi.evolution as evo

STEP_SLACKS: list[float] = []
LEDGERS: list = []
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

_orig_step = evo._step
_orig_run = evo._run


def _recording_step(*args, **kwargs):
    res = _orig_step(*args, **kwargs)
    STEP_SLACKS.append(res.slack)
    return res


def _recording_run(*args, **kwargs):
    traj = _orig_run(*args, **kwargs)
    LEDGERS.append(traj.ledger)
    return traj


evo._step = _recording_step
evo._run = _recording_run


def pytest_collection_modifyitems(config, items):
    # the session-wide dissipation check has to see every other test first
    last = [it for it in items if "criterion_06" in it.name]
    rest = [it for it in items if "criterion_06" not in it.name]
    items[:] = rest + last


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(k: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _record


@pytest.fixture
def energy_records():
    return np.array(STEP_SLACKS), list(LEDGERS)
