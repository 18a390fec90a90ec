"""The twelve acceptance criteria, one test each, with a pass/fail line per criterion."""
import pytest

from branchcoal.verify import acceptance_specs, run_suite

CHECKS = acceptance_specs()


@pytest.mark.parametrize("check", CHECKS, ids=[c.name.split()[0] for c in CHECKS])
def test_acceptance(check, capsys):
    out = run_suite([check], seed=0).outcomes[0]
    budget = "" if out.seconds <= check.budget_seconds else f" over budget {check.budget_seconds:g}s"
    with capsys.disabled():
        print(f"\n{out.line()}{budget}")
    assert out.passed, out.details
    assert out.seconds <= check.budget_seconds
