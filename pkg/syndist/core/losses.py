"""Scalar objectives of the distance/segmentation framework and gradient tools.

Loss maps are H x W tensors; reductions average only over their valid
support and raise ``DegenerateInputError`` instead of dividing by zero.
Every function here is differentiable through torch autograd except where a
nearest-neighbour path is involved.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from syndist.core.robust import robust_nll, robust_rho
from syndist.core.tensor import (
    DTYPE,
    ArrayLike,
    DistanceMap,
    Image,
    ValidityMask,
    as_float,
    as_image,
    as_labels,
    check_same_shape,
    pad_hw,
)
from syndist.core.warp import WarpedDistancePair
from syndist.errors import DegenerateInputError, InvalidArgumentError, UnsupportedGradientError
from syndist.schemas import LossConfig, RobustParams

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


# -- photometric ---------------------------------------------------------------


def ssim_map(I1: Image, I2: Image, window: int = 3) -> torch.Tensor:
    """Per-pixel SSIM over a box window, channel-averaged, in [-1, 1]."""
    I1, I2 = as_image(I1), as_image(I2)
    check_same_shape(I1, I2, "images")
    if window < 1 or window % 2 == 0:
        raise InvalidArgumentError("SSIM window must be a positive odd integer")

    def pool(x: torch.Tensor) -> torch.Tensor:
        chw = pad_hw(x, window // 2).permute(2, 0, 1).unsqueeze(0)
        return F.avg_pool2d(chw, window, stride=1).squeeze(0).permute(1, 2, 0)

    mu_x, mu_y = pool(I1), pool(I2)
    sigma_x = pool(I1 * I1) - mu_x**2
    sigma_y = pool(I2 * I2) - mu_y**2
    sigma_xy = pool(I1 * I2) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return torch.clamp(num / den, -1.0, 1.0).mean(dim=-1)


def photometric_loss(
    I_t: Image,
    I_hat: Image,
    cfg: LossConfig,
    params: RobustParams,
    valid: Optional[ValidityMask] = None,
    robust: bool = True,
    alpha: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """omega * (1 - SSIM) / 2 + (1 - omega) * residual term, per pixel.

    The residual term is c * rho(I_t - I_hat, alpha, c) when ``robust`` is set
    (c * NLL when ``params.adaptive``), which tends to |I_t - I_hat| for
    alpha = 1 as c -> 0; otherwise plain L1. ``alpha`` overrides
    ``params.alpha`` so it can be optimised. Invalid pixels are zero, and
    they read as the target inside SSIM windows so their fill value never
    reaches valid neighbours.
    """
    I_t, I_hat = as_image(I_t), as_float(I_hat)
    check_same_shape(I_t, I_hat, "images")
    if valid is not None:
        valid = torch.as_tensor(valid, dtype=torch.bool)
        check_same_shape(I_t[..., 0], valid, "images and validity mask")
        I_hat = torch.where(valid.unsqueeze(-1), I_hat, I_t)
    diff = I_t - I_hat
    if robust:
        a = as_float(params.alpha) if alpha is None else alpha
        c = torch.tensor(params.c, dtype=DTYPE)
        if params.adaptive:
            residual = params.c * robust_nll(diff, a, c)
        else:
            residual = params.c * robust_rho(diff, a, c)
    else:
        residual = diff.abs()
    residual = residual.mean(dim=-1)
    structure = torch.clamp((1.0 - ssim_map(I_t, I_hat, cfg.ssim_window)) / 2.0, 0.0, 1.0)
    loss = cfg.omega * structure + (1.0 - cfg.omega) * residual
    if valid is not None:
        loss = loss * valid.to(loss.dtype)
    return loss


def clip_photometric(loss_map: torch.Tensor, valid: ValidityMask, quantile: float) -> torch.Tensor:
    """Clamp a loss map at the (detached) quantile of its valid pixels."""
    support = loss_map.detach()[valid]
    if support.numel() == 0:
        return loss_map
    threshold = torch.quantile(support, quantile)
    return torch.minimum(loss_map, threshold)


def min_reprojection(maps: Sequence[torch.Tensor]) -> torch.Tensor:
    """Element-wise minimum over per-source loss maps."""
    if len(maps) == 0:
        raise InvalidArgumentError("min_reprojection needs at least one loss map")
    for m in maps[1:]:
        check_same_shape(maps[0], m, "loss maps")
    return torch.stack(list(maps)).amin(dim=0)


def min_over_valid(maps: Sequence[torch.Tensor], valids: Sequence[ValidityMask]) -> Tuple[torch.Tensor, ValidityMask]:
    """Per-pixel minimum taken only over the sources valid at that pixel."""
    stacked = torch.stack(list(maps))
    ok = torch.stack(list(valids))
    masked = torch.where(ok, stacked, torch.full_like(stacked, math.inf))
    any_valid = ok.any(dim=0)
    best = min_reprojection(list(masked))
    return torch.where(any_valid, best, torch.zeros_like(best)), any_valid


def auto_mask(loss_warped_min: torch.Tensor, loss_unwarped_min: torch.Tensor) -> torch.Tensor:
    """Keep pixels where warping explains the target better than not warping."""
    check_same_shape(loss_warped_min, loss_unwarped_min, "loss maps")
    return loss_warped_min.detach() < loss_unwarped_min.detach()


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    check_same_shape(values, mask, "values and mask")
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("no pixels survive the mask")
    return (values * mask.to(values.dtype)).sum() / count


# -- regularisers --------------------------------------------------------------


def smoothness_loss(D: DistanceMap, I: Image) -> torch.Tensor:
    """Edge-aware smoothness of the mean-normalised inverse distance."""
    D = as_float(D)
    if not bool((D.detach() > 0).all()):
        raise InvalidArgumentError("distance must be strictly positive")
    I = as_image(I)
    inv = 1.0 / D
    norm = inv / inv.mean()
    total = torch.zeros((), dtype=DTYPE)
    for dim in (1, 0):
        n = norm.shape[dim]
        if n < 2:
            continue
        d_grad = (norm.narrow(dim, 1, n - 1) - norm.narrow(dim, 0, n - 1)).abs()
        i_grad = (I.narrow(dim, 1, n - 1) - I.narrow(dim, 0, n - 1)).abs().mean(dim=-1)
        total = total + (d_grad * torch.exp(-i_grad)).mean()
    return total


def csdcl(pair_fwd: WarpedDistancePair, pair_bwd: WarpedDistancePair) -> torch.Tensor:
    """Cross-sequence distance consistency, forward plus backward direction."""
    total = torch.zeros((), dtype=DTYPE)
    for direction, pair in (("forward", pair_fwd), ("backward", pair_bwd)):
        if not bool(pair.valid.any()):
            raise DegenerateInputError(f"no valid pixels in the {direction} distance pair")
        total = total + (pair.transformed - pair.sampled).abs()[pair.valid].mean()
    return total


# -- segmentation and task weighting -------------------------------------------


def check_prob_map(Y: torch.Tensor) -> None:
    if Y.dim() != 3:
        raise InvalidArgumentError(f"posterior must be HxWxS, got {tuple(Y.shape)}")
    y = Y.detach()
    if bool(((y < 0) | (y > 1)).any()) or bool(((y.sum(dim=-1) - 1).abs() > 1e-6).any()):
        raise InvalidArgumentError("posterior entries must be in [0, 1] and sum to 1 per pixel")


def cross_entropy(Y: ArrayLike, labels: ArrayLike, ignore_id: int = 255) -> torch.Tensor:
    """Mean of -log Y(pixel, true class) over non-ignored pixels."""
    Y, labels = as_float(Y), as_labels(labels)
    check_prob_map(Y)
    if Y.shape[:2] != labels.shape:
        raise InvalidArgumentError("posterior and labels must share spatial shape")
    num_classes = Y.shape[-1]
    keep = labels != ignore_id
    if bool((keep & ((labels < 0) | (labels >= num_classes))).any()):
        raise InvalidArgumentError(f"labels must lie in [0, {num_classes}) or equal ignore_id")
    if not bool(keep.any()):
        raise DegenerateInputError("every pixel is ignored")
    picked = Y.gather(-1, labels.clamp(0, num_classes - 1).unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(1e-12))[keep].mean()


def total_distance_loss(
    reconstruction: ArrayLike, smoothness: ArrayLike, consistency: ArrayLike, cfg: LossConfig
) -> torch.Tensor:
    """L_r + beta * L_s + gamma * L_dc."""
    terms = [as_float(t) for t in (reconstruction, smoothness, consistency)]
    if not all(bool(torch.isfinite(t.detach()).all()) for t in terms):
        raise InvalidArgumentError("loss terms must be finite")
    rec, smooth, cons = terms
    return rec + cfg.beta * smooth + cfg.gamma * cons


@dataclass(frozen=True)
class TaskUncertainty:
    """Homoscedastic task noise scales, stored as log sigma."""

    log_sigma1: torch.Tensor
    log_sigma2: torch.Tensor

    @classmethod
    def from_sigmas(cls, sigma1: ArrayLike, sigma2: ArrayLike) -> "TaskUncertainty":
        s1, s2 = as_float(sigma1), as_float(sigma2)
        if not (float(s1.detach()) > 0 and float(s2.detach()) > 0):
            raise InvalidArgumentError("task noise scales must be > 0")
        return cls(torch.log(s1), torch.log(s2))

    @property
    def sigma1(self) -> torch.Tensor:
        return torch.exp(self.log_sigma1)

    @property
    def sigma2(self) -> torch.Tensor:
        return torch.exp(self.log_sigma2)


def task_weight(sigma: ArrayLike) -> torch.Tensor:
    sigma = as_float(sigma)
    return 1.0 / (2.0 * sigma**2)


def mtl_weighted_loss(L_tot: ArrayLike, L_ce: ArrayLike, u: TaskUncertainty) -> torch.Tensor:
    """L_tot/(2 s1^2) + L_ce/(2 s2^2) + log(1 + s1) + log(1 + s2)."""
    s1, s2 = u.sigma1, u.sigma2
    return (
        task_weight(s1) * as_float(L_tot)
        + task_weight(s2) * as_float(L_ce)
        + torch.log1p(s1)
        + torch.log1p(s2)
    )


# -- gradients -----------------------------------------------------------------


def grad(fn: Callable[[torch.Tensor], torch.Tensor], x: ArrayLike) -> torch.Tensor:
    """Gradient of a scalar functional ``fn`` at ``x`` by reverse-mode autodiff."""
    x = as_float(x).detach().clone().requires_grad_(True)
    out = fn(x)
    if not isinstance(out, torch.Tensor) or not out.requires_grad:
        raise UnsupportedGradientError("functional output does not depend differentiably on its input")
    if out.numel() != 1:
        raise InvalidArgumentError("gradient requires a scalar functional")
    (g,) = torch.autograd.grad(out.reshape(()), x)
    return g


def finite_difference(
    fn: Callable[[torch.Tensor], torch.Tensor],
    x: ArrayLike,
    step: float = 1e-4,
    indices: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Central differences of ``fn`` at the flat ``indices`` of ``x`` (all by default)."""
    x = as_float(x).detach().clone()
    flat = x.reshape(-1)
    if indices is None:
        indices = torch.arange(flat.numel())
    out = torch.zeros(indices.numel(), dtype=DTYPE)
    with torch.no_grad():
        for n, i in enumerate(indices.tolist()):
            orig = float(flat[i])
            flat[i] = orig + step
            f_plus = float(fn(x))
            flat[i] = orig - step
            f_minus = float(fn(x))
            flat[i] = orig
            out[n] = (f_plus - f_minus) / (2 * step)
    return out


@dataclass(frozen=True)
class GradientCheck:
    passed: bool
    fraction_ok: float
    worst_error: float
    checked: int


def check_gradient(
    fn: Callable[[torch.Tensor], torch.Tensor],
    x: ArrayLike,
    rtol: float = 1e-3,
    fraction: float = 0.99,
    step: float = 1e-4,
    atol: float = 1e-8,
    max_coords: Optional[int] = None,
    seed: int = 0,
    analytic: Optional[Callable[[Callable, torch.Tensor], torch.Tensor]] = None,
) -> GradientCheck:
    """Compare an analytic gradient against central finite differences.

    A coordinate passes when |g - fd| <= rtol * max(|g|, |fd|, atol).
    ``analytic`` replaces autodiff, e.g. to confirm a corrupted gradient is caught.
    """
    x = as_float(x).detach()
    g = (analytic or grad)(fn, x).reshape(-1)
    n = g.numel()
    if max_coords is not None and max_coords < n:
        gen = torch.Generator().manual_seed(seed)
        indices = torch.randperm(n, generator=gen)[:max_coords]
    else:
        indices = torch.arange(n)
    fd = finite_difference(fn, x, step, indices)
    ga = g[indices]
    scale = torch.maximum(torch.maximum(ga.abs(), fd.abs()), torch.full_like(fd, atol))
    err = (ga - fd).abs() / scale
    frac = float((err <= rtol).to(DTYPE).mean())
    return GradientCheck(passed=frac >= fraction, fraction_ok=frac, worst_error=float(err.max()), checked=indices.numel())
