"""Tests for the oracle suite."""

from syndist.core.losses import grad
from syndist.verify import check_robust_gradient, format_table, run_checks


def test_all_checks_pass_by_default() -> None:
    results = run_checks()
    failed = [(r.name, r.detail) for r in results if not r.passed]
    assert failed == []
    assert len({r.name for r in results}) == len(results)


def test_sign_error_in_gradient_is_caught() -> None:
    assert check_robust_gradient(1e-3).passed
    assert not check_robust_gradient(1e-3, analytic=lambda fn, x: -grad(fn, x)).passed


def test_tolerance_below_float_noise_fails() -> None:
    results = run_checks(fd_tol=1e-9)
    assert not all(r.passed for r in results)


def test_format_table() -> None:
    table = format_table(run_checks())
    assert "PASS" in table
    assert "robust loss gradient" in table
