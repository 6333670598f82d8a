"""Acceptance gate: every criterion runs at its pinned size and tolerance.

The shared session workspace keeps the total cost near a single verify-all
run; each test prints the one-line verdict and fails with full details.
"""
import pytest

from fastslow import acceptance


@pytest.mark.parametrize("cid", range(1, 13))
def test_criterion(cid, workspace, capsys):
    fn = getattr(acceptance, f"criterion_{cid}")
    result = fn(workspace)
    with capsys.disabled():
        print("\n" + result.line(), end="")
    assert result.passed, f"criterion {cid} failed: {result.details}"


def test_full_runner_reports(workspace):
    results = acceptance.run_all(workspace, ids=[1, 2, 3], echo=lambda *_: None)
    blob = acceptance.results_to_json(results)
    assert '"all_passed": true' in blob
