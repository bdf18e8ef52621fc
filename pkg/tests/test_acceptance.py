"""One test per acceptance criterion; each prints a PASS/FAIL line with the measured value."""
import pytest

from volunc import acceptance


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    r = acceptance.CRITERIA[number]()
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.line()
