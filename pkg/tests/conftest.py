from __future__ import annotations

import pytest

from warfarin_xrl.cohort import CohortConfig, Patient, generate_cohort
from warfarin_xrl.pkpd import PhysiologyEffects


def make_patient(pid=0, cyp2c9="*1/*1", vkorc1="G/G", age=60.0, **kw) -> Patient:
    fields = dict(id=pid, age=age, weight=180.0, height=68.0, sex="male", race="White", tobacco=False,
                  amiodarone=False, fluvastatin=False, cyp2c9=cyp2c9, vkorc1=vkorc1,
                  physiology=PhysiologyEffects())
    fields.update(kw)
    return Patient(**fields)


@pytest.fixture
def patient():
    return make_patient()


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(CohortConfig(size=40, seed=11))


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def record():
    """Collects one PASS/FAIL line per acceptance criterion."""
    def _record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
