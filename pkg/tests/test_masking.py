"""Tests for dynamic-object masking and the motion policy."""

import pytest
import torch

from syndist.core.masking import (
    MotionVerdict,
    apply_mask_policy,
    dynamic_mask,
    masked_reconstruction_loss,
    motion_score,
)
from syndist.core.tensor import DTYPE
from syndist.errors import DegenerateInputError, InvalidArgumentError
from syndist.schemas import BUILDING, PEDESTRIAN, RIDER, ROAD, VEHICLE

DC = [VEHICLE, PEDESTRIAN, RIDER]


def test_dynamic_mask_membership() -> None:
    assert not bool(dynamic_mask(torch.tensor([VEHICLE]), torch.tensor([ROAD]), DC)[0])
    assert not bool(dynamic_mask(torch.tensor([ROAD]), torch.tensor([RIDER]), DC)[0])
    assert bool(dynamic_mask(torch.tensor([ROAD]), torch.tensor([ROAD]), DC)[0])


def test_dynamic_mask_brute_force() -> None:
    gen = torch.Generator().manual_seed(0)
    a = torch.randint(0, 6, (16, 16), generator=gen)
    b = torch.randint(0, 6, (16, 16), generator=gen)
    mu = dynamic_mask(a, b, DC)
    for i in range(16):
        for j in range(16):
            expected = int(a[i, j]) not in DC and int(b[i, j]) not in DC
            assert bool(mu[i, j]) == expected


def test_dynamic_mask_shape_mismatch() -> None:
    with pytest.raises(InvalidArgumentError):
        dynamic_mask(torch.zeros(2, 2), torch.zeros(2, 3), DC)


def _square(u0: int) -> torch.Tensor:
    m = torch.full((8, 8), BUILDING)
    m[2:6, u0 : u0 + 4] = VEHICLE
    return m


def test_motion_score() -> None:
    parked = motion_score(_square(0), _square(0), DC)
    assert parked == MotionVerdict(score=0.0, moving=False)

    assert motion_score(_square(0), _square(4), DC) == MotionVerdict(score=1.0, moving=True)

    half = motion_score(_square(0), _square(2), DC)
    assert half.score == pytest.approx(2 / 3)
    assert half.moving


def test_motion_score_without_dynamic_pixels() -> None:
    empty = torch.full((4, 4), ROAD)
    assert motion_score(empty, empty, DC).score == 0.0


def test_mask_policy() -> None:
    verdicts = [
        MotionVerdict(0.9, True),
        MotionVerdict(0.1, False),
        MotionVerdict(0.5, True),
        MotionVerdict(0.7, True),
    ]
    assert apply_mask_policy(verdicts, 0.0) == [False] * 4
    assert apply_mask_policy(verdicts, 1.0) == [True, False, True, True]
    assert apply_mask_policy(verdicts, 0.5) == [True, False, False, True]
    with pytest.raises(InvalidArgumentError):
        apply_mask_policy(verdicts, 1.5)


def test_mask_policy_breaks_ties_by_index() -> None:
    verdicts = [MotionVerdict(0.5, True)] * 3
    assert apply_mask_policy(verdicts, 0.34) == [True, True, False]


def test_masked_reconstruction_loss() -> None:
    loss = torch.tensor([[1.0, 3.0], [5.0, 7.0]], dtype=DTYPE)
    mu = torch.tensor([[True, True], [False, True]])
    auto = torch.tensor([[True, False], [True, True]])
    valid = torch.ones(2, 2, dtype=torch.bool)
    assert float(masked_reconstruction_loss(loss, mu, auto, valid)) == pytest.approx(4.0)
    with pytest.raises(DegenerateInputError):
        masked_reconstruction_loss(loss, torch.zeros_like(mu), auto, valid)
