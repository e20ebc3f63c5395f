"""Dynamic-object masking driven by semantic segmentation.

A pixel is kept when neither the target label nor the label warped in from
the source frame belongs to a potentially dynamic class. Whether a frame
gets the mask at all depends on how much its dynamic regions moved: parked
cars stay in the objective, driving ones are masked out for a fixed
fraction of the sequence.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import torch

from syndist.core.losses import masked_mean
from syndist.core.tensor import SegMask, ValidityMask, as_labels, check_same_shape
from syndist.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_MOTION_THRESHOLD = 0.25


@dataclass(frozen=True)
class MotionVerdict:
    score: float
    moving: bool


def _dc_region(labels: torch.Tensor, dc_classes: Iterable[int]) -> torch.Tensor:
    dc = torch.as_tensor(sorted(set(int(c) for c in dc_classes)), dtype=torch.long)
    return torch.isin(labels, dc)


def dynamic_mask(M_t: SegMask, M_warped: SegMask, dc_classes: Iterable[int]) -> torch.Tensor:
    """mu = 1 where neither label is a dynamic class, else 0."""
    M_t, M_warped = as_labels(M_t), as_labels(M_warped)
    check_same_shape(M_t, M_warped, "segmentation masks")
    dc = list(dc_classes)
    return ~_dc_region(M_t, dc) & ~_dc_region(M_warped, dc)


def motion_score(
    M_t: SegMask,
    M_warped: SegMask,
    dc_classes: Iterable[int],
    threshold: float = DEFAULT_MOTION_THRESHOLD,
    valid: Optional[ValidityMask] = None,
) -> MotionVerdict:
    """1 - IoU of the dynamic regions of the target and warped masks."""
    M_t, M_warped = as_labels(M_t), as_labels(M_warped)
    check_same_shape(M_t, M_warped, "segmentation masks")
    dc = list(dc_classes)
    a, b = _dc_region(M_t, dc), _dc_region(M_warped, dc)
    if valid is not None:
        a, b = a & valid, b & valid
    union = int((a | b).sum())
    if union == 0:
        return MotionVerdict(score=0.0, moving=False)
    score = 1.0 - int((a & b).sum()) / union
    return MotionVerdict(score=score, moving=score > threshold)


def apply_mask_policy(verdicts: Sequence[MotionVerdict], epsilon: float) -> List[bool]:
    """Mask the ceil(epsilon * N) highest-scoring frames that are moving.

    Ties are broken by frame index, ascending.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgumentError("epsilon must lie in [0, 1]")
    n = len(verdicts)
    budget = math.ceil(epsilon * n - 1e-9)
    ranked = sorted(range(n), key=lambda i: (-verdicts[i].score, i))
    chosen = set(ranked[:budget])
    decisions = [i in chosen and verdicts[i].moving for i in range(n)]
    logger.debug("Mask policy: %d of %d frames masked (budget %d)", sum(decisions), n, budget)
    return decisions


def masked_reconstruction_loss(
    min_loss_map: torch.Tensor, mu: torch.Tensor, auto: torch.Tensor, valid: ValidityMask
) -> torch.Tensor:
    """Mean of the minimum reprojection loss over mu AND auto AND valid pixels."""
    for m in (mu, auto, valid):
        check_same_shape(min_loss_map, m, "loss map and masks")
    return masked_mean(min_loss_map, mu.bool() & auto.bool() & valid.bool())
