"""Tests for photometric, regulariser, segmentation and task-weighting losses."""

import math

import pytest
import torch

from syndist.core.losses import (
    auto_mask,
    check_gradient,
    cross_entropy,
    csdcl,
    grad,
    masked_mean,
    min_over_valid,
    min_reprojection,
    mtl_weighted_loss,
    photometric_loss,
    smoothness_loss,
    ssim_map,
    total_distance_loss,
    TaskUncertainty,
)
from syndist.core.robust import robust_rho
from syndist.core.tensor import DTYPE
from syndist.core.warp import WarpedDistancePair
from syndist.errors import DegenerateInputError, InvalidArgumentError, UnsupportedGradientError
from syndist.schemas import LossConfig, RobustParams


@pytest.fixture
def images():
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(12, 16, 3, generator=gen, dtype=DTYPE)
    b = torch.rand(12, 16, 3, generator=gen, dtype=DTYPE)
    return a, b


def test_ssim_self_similarity_and_symmetry(images) -> None:
    a, b = images
    assert torch.allclose(ssim_map(a, a), torch.ones(12, 16, dtype=DTYPE))
    assert torch.allclose(ssim_map(a, b), ssim_map(b, a))


def test_ssim_constant_images() -> None:
    s = ssim_map(torch.full((5, 5, 1), 0.2, dtype=DTYPE), torch.full((5, 5, 1), 0.4, dtype=DTYPE))
    expected = (2 * 0.08 + 1e-4) / (0.04 + 0.16 + 1e-4)
    assert torch.allclose(s, torch.full((5, 5), expected, dtype=DTYPE))
    assert expected == pytest.approx(0.8001, abs=1e-4)


def test_photometric_zero_for_identical_images(images) -> None:
    a, _ = images
    loss = photometric_loss(a, a, LossConfig(), RobustParams())
    assert float(loss.abs().max()) < 1e-12


def test_photometric_mixing_endpoints(images) -> None:
    a, b = images
    params = RobustParams(alpha=1.0, c=0.01)

    l1 = photometric_loss(a, b, LossConfig(omega=0.0), params, robust=False)
    assert torch.allclose(l1, (a - b).abs().mean(dim=-1))

    rob = photometric_loss(a, b, LossConfig(omega=0.0), params)
    assert torch.allclose(rob, (0.01 * robust_rho(a - b, 1.0, 0.01)).mean(dim=-1))

    structural = photometric_loss(a, b, LossConfig(omega=1.0), params)
    assert torch.allclose(structural, torch.clamp((1 - ssim_map(a, b)) / 2, 0, 1))


def test_photometric_zero_outside_valid(images) -> None:
    a, b = images
    valid = torch.zeros(12, 16, dtype=torch.bool)
    valid[:, :8] = True
    loss = photometric_loss(a, b, LossConfig(), RobustParams(), valid=valid)
    assert bool((loss[:, 8:] == 0).all())


def test_photometric_fill_does_not_leak_into_valid_pixels(images) -> None:
    a, b = images
    valid = torch.ones(12, 16, dtype=torch.bool)
    valid[:, 8] = False
    zero_filled = b.clone()
    zero_filled[:, 8] = 0.0
    cfg, params = LossConfig(), RobustParams()
    assert torch.allclose(
        photometric_loss(a, zero_filled, cfg, params, valid=valid),
        photometric_loss(a, b, cfg, params, valid=valid),
    )


def test_min_reprojection() -> None:
    A = torch.tensor([1.0, 5.0], dtype=DTYPE)
    B = torch.tensor([3.0, 2.0], dtype=DTYPE)
    assert min_reprojection([A]).tolist() == [1.0, 5.0]
    assert min_reprojection([A, A]).tolist() == [1.0, 5.0]
    assert min_reprojection([A, B]).tolist() == [1.0, 2.0]
    with pytest.raises(InvalidArgumentError):
        min_reprojection([])


def test_min_over_valid_ignores_invalid_sources() -> None:
    A = torch.tensor([1.0, 5.0, 4.0], dtype=DTYPE)
    B = torch.tensor([3.0, 2.0, 1.0], dtype=DTYPE)
    best, any_valid = min_over_valid(
        [A, B], [torch.tensor([True, True, False]), torch.tensor([False, True, False])]
    )
    assert best.tolist() == [1.0, 2.0, 0.0]
    assert any_valid.tolist() == [True, True, False]


def test_auto_mask() -> None:
    warped = torch.tensor([[0.1, 0.2]], dtype=DTYPE)
    assert not bool(auto_mask(warped, torch.zeros_like(warped)).any())
    assert bool(auto_mask(warped, warped + 1).all())


def test_masked_mean_degenerate() -> None:
    with pytest.raises(DegenerateInputError):
        masked_mean(torch.ones(2, 2, dtype=DTYPE), torch.zeros(2, 2, dtype=torch.bool))


def test_smoothness_constant_distance() -> None:
    gen = torch.Generator().manual_seed(1)
    I = torch.rand(6, 6, 3, generator=gen, dtype=DTYPE)
    assert float(smoothness_loss(torch.full((6, 6), 3.0, dtype=DTYPE), I)) == 0.0


def test_smoothness_hand_computed() -> None:
    D = 1.0 / torch.tensor([[1.0, 2.0, 3.0]], dtype=DTYPE)
    I = torch.full((1, 3, 1), 0.5, dtype=DTYPE)
    assert float(smoothness_loss(D, I)) == pytest.approx(0.5)


def test_smoothness_is_edge_aware() -> None:
    D = torch.full((8, 8), 5.0, dtype=DTYPE)
    D[:, 4:] = 2.0
    flat = torch.full((8, 8, 1), 0.5, dtype=DTYPE)
    edge = flat.clone()
    edge[:, 4:] = 1.0
    assert float(smoothness_loss(D, edge)) < float(smoothness_loss(D, flat))


def _pair(transformed: torch.Tensor, sampled: torch.Tensor) -> WarpedDistancePair:
    return WarpedDistancePair(transformed, sampled, torch.ones_like(transformed, dtype=torch.bool))


def test_csdcl_values() -> None:
    d = torch.full((4, 4), 3.0, dtype=DTYPE)
    assert float(csdcl(_pair(d, d), _pair(d, d))) == 0.0
    assert float(csdcl(_pair(d, d + 0.1), _pair(d, d + 0.1))) == pytest.approx(0.2)


def test_csdcl_requires_valid_pixels() -> None:
    d = torch.ones(2, 2, dtype=DTYPE)
    empty = WarpedDistancePair(d, d, torch.zeros(2, 2, dtype=torch.bool))
    with pytest.raises(DegenerateInputError):
        csdcl(_pair(d, d), empty)


def test_cross_entropy() -> None:
    labels = torch.tensor([[0, 1], [2, 3]])
    one_hot = torch.nn.functional.one_hot(labels, 4).to(DTYPE)
    assert float(cross_entropy(one_hot, labels)) == pytest.approx(0.0, abs=1e-12)

    uniform = torch.full((2, 2, 4), 0.25, dtype=DTYPE)
    assert float(cross_entropy(uniform, labels)) == pytest.approx(math.log(4))

    with pytest.raises(DegenerateInputError):
        cross_entropy(uniform, torch.full((2, 2), 255))
    with pytest.raises(InvalidArgumentError):
        cross_entropy(torch.full((2, 2, 4), 0.3, dtype=DTYPE), labels)


def test_total_distance_loss() -> None:
    assert float(total_distance_loss(1.0, 2.0, 3.0, LossConfig(beta=0.0, gamma=0.0))) == 1.0
    assert float(total_distance_loss(1.0, 2.0, 3.0, LossConfig(beta=0.1, gamma=0.05))) == pytest.approx(1.35)
    assert float(total_distance_loss(0.0, 0.0, 0.0, LossConfig())) == 0.0
    with pytest.raises(InvalidArgumentError):
        total_distance_loss(math.nan, 0.0, 0.0, LossConfig())


def test_mtl_weighted_loss() -> None:
    value = mtl_weighted_loss(2.0, 4.0, TaskUncertainty.from_sigmas(1.0, 2.0))
    assert float(value) == pytest.approx(1 + 0.5 + math.log(2) + math.log(3))
    swapped = mtl_weighted_loss(4.0, 2.0, TaskUncertainty.from_sigmas(2.0, 1.0))
    assert float(swapped) == pytest.approx(float(value))
    with pytest.raises(InvalidArgumentError):
        TaskUncertainty.from_sigmas(0.0, 1.0)


def test_mtl_gradient_wrt_sigma1() -> None:
    g = grad(lambda s1: mtl_weighted_loss(2.0, 4.0, TaskUncertainty.from_sigmas(s1, 2.0)), 1.0)
    assert float(g) == pytest.approx(-1.5)


def test_grad_requires_differentiable_functional() -> None:
    with pytest.raises(UnsupportedGradientError):
        grad(lambda x: torch.tensor(1.0, dtype=DTYPE), torch.ones(3, dtype=DTYPE))


def test_smoothness_gradient_matches_finite_differences() -> None:
    gen = torch.Generator().manual_seed(2)
    D = 2.0 + torch.rand(6, 6, generator=gen, dtype=DTYPE)
    I = torch.rand(6, 6, 3, generator=gen, dtype=DTYPE)
    result = check_gradient(lambda d: smoothness_loss(d, I), D, step=1e-6)
    assert result.passed, result


def test_check_gradient_catches_wrong_gradient() -> None:
    x = torch.linspace(0.5, 1.5, 5, dtype=DTYPE)
    negated = lambda fn, v: -grad(fn, v)  # noqa: E731
    result = check_gradient(lambda v: (v**3).sum(), x, analytic=negated)
    assert not result.passed
