from stochks.verify import run_suite


def test_quick_profile_passes():
    results = run_suite("quick", report=None)
    bad = [r.line() for r in results if not r.passed]
    assert not bad, bad
    assert len(results) == 8
