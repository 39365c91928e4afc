"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one PASS/FAIL line; run ``python3 tests/test_acceptance.py``
for just the table.
"""

import sys

import pytest

from fnhydro.checks import REGISTRY, CheckContext, run_check

CRITERIA = sorted(n for n, c in REGISTRY.items() if c.group == "acceptance")


@pytest.mark.parametrize("name", CRITERIA)
def test_criterion(name, capsys):
    res = run_check(name, CheckContext())
    with capsys.disabled():
        sys.stdout.write(f"\n{res.line()} ({res.seconds:.1f}s)\n")
    assert res.passed, res.line()


if __name__ == "__main__":
    results = [run_check(n, CheckContext()) for n in CRITERIA]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
