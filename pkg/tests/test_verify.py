"""The property registry behind ``hetreg verify``."""
from collections import Counter

from hetreg import verify


def test_registry_complete():
    assert verify.registry_complete()
    assert len(verify.REGISTRY) == verify.EXPECTED_COUNT == 30
    by_module = Counter(p.module for p in verify.REGISTRY)
    assert set(by_module) == {"linalg", "gaussian", "pseudolabel", "autodiff", "losses", "datasets", "bench_cli"}


def test_all_properties_pass_at_reduced_scale():
    outcomes = verify.run_all(seed=1, scale=0.1)
    failed = [(o.key, o.error, o.margin) for o in outcomes if not o.passed]
    assert not failed
    assert len(outcomes) == 30


def test_report_has_one_line_per_property():
    outcomes = verify.run_all(seed=0, scale=0.05, only="linalg")
    report = verify.format_report(outcomes)
    assert len(outcomes) == 5
    for o in outcomes:
        assert o.key in report
