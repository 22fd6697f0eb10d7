"""End-to-end acceptance checks, one test per criterion.

Criterion 11 audits every ledger logged by the earlier criteria, so the
parametrization keeps them in numeric order.
"""
import pytest

from twostage.acceptance import CRITERIA


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.detail
