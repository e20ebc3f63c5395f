"""Tests for the general robust loss and its adaptive likelihood."""

import math

import numpy as np
import pytest
import torch

from syndist.core.losses import grad
from syndist.core.robust import (
    alpha_from_raw,
    fit_robust_params,
    log_partition,
    partition_quadrature,
    raw_from_alpha,
    robust_nll,
    robust_rho,
)
from syndist.core.tensor import DTYPE
from syndist.errors import InvalidArgumentError, OutOfRangeError


@pytest.mark.parametrize("alpha", [-math.inf, -2.0, 0.0, 0.5, 1.0, 2.0, 4.0, math.inf])
def test_rho_is_zero_at_zero(alpha: float) -> None:
    assert float(robust_rho(0.0, alpha, 1.0)) == 0.0


def test_rho_charbonnier_value() -> None:
    assert float(robust_rho(1.0, 1.0, 1.0)) == pytest.approx(math.sqrt(2) - 1, abs=1e-12)


def test_rho_geman_mcclure_value() -> None:
    assert float(robust_rho(1.0, -2.0, 1.0)) == pytest.approx(0.4, abs=1e-12)


def test_rho_special_cases() -> None:
    x = torch.linspace(-3, 3, 13, dtype=DTYPE)
    assert torch.allclose(robust_rho(x, 2.0, 1.0), 0.5 * x**2)
    assert torch.allclose(robust_rho(x, 0.0, 1.0), torch.log1p(0.5 * x**2))
    assert torch.allclose(robust_rho(x, -math.inf, 1.0), 1 - torch.exp(-0.5 * x**2))


@pytest.mark.parametrize("alpha", [0.0, 2.0])
def test_rho_continuous_at_removable_singularities(alpha: float) -> None:
    x = torch.linspace(-10, 10, 41, dtype=DTYPE)
    exact = robust_rho(x, alpha, 10.0)
    near = robust_rho(x, alpha + 1e-7, 10.0)
    assert torch.allclose(exact, near, atol=1e-5)


def test_rho_rejects_non_positive_scale() -> None:
    with pytest.raises(InvalidArgumentError):
        robust_rho(1.0, 1.0, 0.0)


@pytest.mark.parametrize("alpha", [-2.0, 0.0, 1.0, 2.0])
def test_rho_gradient_vanishes_at_zero(alpha: float) -> None:
    g = grad(lambda x: robust_rho(x, alpha, 1.0), torch.tensor(0.0, dtype=DTYPE))
    assert float(g) == 0.0


def test_gaussian_partition() -> None:
    assert partition_quadrature(2.0) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-9)
    assert float(robust_nll(0.0, 2.0, 1.0)) == pytest.approx(math.log(math.sqrt(2 * math.pi)), abs=1e-9)


def test_log_partition_matches_quadrature_between_nodes() -> None:
    for alpha in (0.3, 1.01, 1.77):
        assert float(log_partition(alpha)) == pytest.approx(math.log(partition_quadrature(alpha)), abs=1e-5)


def test_nll_domain() -> None:
    with pytest.raises(OutOfRangeError):
        robust_nll(0.5, 0.0, 1.0)
    with pytest.raises(OutOfRangeError):
        robust_nll(0.5, 2.5, 1.0)
    with pytest.raises(OutOfRangeError):
        partition_quadrature(-0.1)


def test_alpha_reparameterisation() -> None:
    assert float(alpha_from_raw(raw_from_alpha(1.3))) == pytest.approx(1.3)
    with pytest.raises(OutOfRangeError):
        raw_from_alpha(2.0)


def test_fit_gaussian_residuals_prefers_quadratic() -> None:
    x = np.random.default_rng(0).normal(size=20000)
    fit = fit_robust_params(x)
    assert fit.alpha > 1.7


def test_fit_contaminated_residuals_prefers_heavy_tails() -> None:
    rng = np.random.default_rng(0)
    x = rng.normal(size=20000)
    outliers = rng.random(20000) < 0.2
    x[outliers] = rng.standard_cauchy(int(outliers.sum()))
    fit = fit_robust_params(x)
    assert fit.alpha < 1.0
