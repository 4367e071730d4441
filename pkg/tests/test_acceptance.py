"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line each (run with -s to see them)."""
import pytest

from qvault.acceptance import CRITERIA, DEFAULT_SEED, run_criterion

from conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1), ids=[name for name, _ in CRITERIA])
def test_criterion(number):
    result = run_criterion(number, DEFAULT_SEED)
    print(result.line())
    ACCEPTANCE_LINES.append((number, result.line()))
    assert result.passed, result.detail


def test_criteria_count():
    assert len(CRITERIA) == 10
