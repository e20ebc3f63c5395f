"""General robust loss rho(x, alpha, c) and its adaptive (NLL) form.

rho interpolates L2 (alpha=2), Charbonnier (alpha=1), Cauchy (alpha=0),
Geman-McClure (alpha=-2) and Welsch (alpha=-inf). The removable
singularities at alpha in {0, 2} are evaluated in closed form; elsewhere
the expm1/log1p form keeps precision near both.

The adaptive form is the negative log-likelihood of the density
exp(-rho(x/c)) / (c * Z(alpha)). log Z is tabulated once by quadrature and
evaluated through a cubic Hermite interpolant in torch, so it is
differentiable in alpha.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import torch
from scipy import integrate, interpolate

from syndist.core.tensor import DTYPE, ArrayLike, as_float
from syndist.errors import InvalidArgumentError, OutOfRangeError

logger = logging.getLogger(__name__)

ALPHA_NODES = 257
_MAX_EXP = 700.0
_EPS = float(np.finfo(np.float64).eps)


def robust_rho(xi: ArrayLike, alpha: ArrayLike, c: ArrayLike) -> torch.Tensor:
    """Element-wise rho(xi, alpha, c); alpha and c broadcast against xi."""
    xi, alpha, c = as_float(xi), as_float(alpha), as_float(c)
    if not bool((c.detach() > 0).all()):
        raise InvalidArgumentError("scale c must be > 0")
    x2 = (xi / c) ** 2

    loss_two = 0.5 * x2
    loss_zero = torch.log1p(0.5 * x2)
    loss_neginf = -torch.expm1(-0.5 * x2)
    loss_posinf = torch.expm1(torch.clamp(0.5 * x2, max=_MAX_EXP))

    # |2 - alpha| and |alpha| are kept away from zero so both divisions are safe.
    b = torch.clamp(torch.abs(alpha - 2.0), min=_EPS)
    sign = torch.where(alpha >= 0, torch.ones_like(alpha), -torch.ones_like(alpha))
    a = sign * torch.clamp(torch.abs(alpha), min=_EPS)
    a = torch.where(torch.isfinite(a), a, sign)
    b = torch.where(torch.isfinite(b), b, torch.ones_like(b))
    exponent = torch.clamp(0.5 * a * torch.log1p(x2 / b), max=_MAX_EXP)
    loss_otherwise = (b / a) * torch.expm1(exponent)

    return torch.where(
        alpha == -math.inf,
        loss_neginf,
        torch.where(
            alpha == 0,
            loss_zero,
            torch.where(alpha == 2, loss_two, torch.where(alpha == math.inf, loss_posinf, loss_otherwise)),
        ),
    )


def _rho_scalar(x: float, alpha: float) -> float:
    x2 = x * x
    if alpha == 2.0:
        return 0.5 * x2
    if alpha == 0.0:
        return math.log1p(0.5 * x2)
    b = abs(alpha - 2.0)
    return (b / alpha) * math.expm1(0.5 * alpha * math.log1p(x2 / b))


def partition_quadrature(alpha: float) -> float:
    """Z(alpha) = integral of exp(-rho(x, alpha, 1)) over the real line."""
    if not 0.0 <= alpha <= 2.0:
        raise OutOfRangeError(f"partition function is only tabulated for alpha in [0, 2], got {alpha}")
    half, _ = integrate.quad(
        lambda x: math.exp(-_rho_scalar(x, alpha)), 0.0, math.inf, epsabs=1e-13, epsrel=1e-12, limit=500
    )
    return 2.0 * half


@lru_cache(maxsize=1)
def _log_partition_table() -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    logger.debug("Building log Z(alpha) table on %d nodes", ALPHA_NODES)
    nodes = np.linspace(0.0, 2.0, ALPHA_NODES)
    values = np.log([partition_quadrature(float(a)) for a in nodes])
    slopes = interpolate.CubicSpline(nodes, values)(nodes, 1)
    return torch.from_numpy(nodes), torch.from_numpy(values), torch.from_numpy(slopes)


def log_partition(alpha: ArrayLike) -> torch.Tensor:
    """Interpolated log Z(alpha) for alpha in [0, 2]."""
    alpha = as_float(alpha)
    nodes, values, slopes = _log_partition_table()
    h = float(nodes[1] - nodes[0])
    idx = torch.clamp(torch.floor(alpha.detach() / h).long(), 0, ALPHA_NODES - 2)
    t = (alpha - nodes[idx]) / h
    t2, t3 = t * t, t * t * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * values[idx] + h10 * h * slopes[idx] + h01 * values[idx + 1] + h11 * h * slopes[idx + 1]


def robust_nll(xi: ArrayLike, alpha: ArrayLike, c: ArrayLike) -> torch.Tensor:
    """Negative log-likelihood rho + log c + log Z(alpha), alpha in (0, 2]."""
    alpha, c = as_float(alpha), as_float(c)
    a = alpha.detach()
    if not bool(((a > 0) & (a <= 2)).all()):
        raise OutOfRangeError("adaptive alpha must lie in (0, 2]")
    return robust_rho(xi, alpha, c) + torch.log(c) + log_partition(alpha)


def alpha_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Smooth map of an unconstrained parameter onto (0, 2)."""
    return 2.0 * torch.sigmoid(raw)


def raw_from_alpha(alpha: float) -> torch.Tensor:
    if not 0.0 < alpha < 2.0:
        raise OutOfRangeError("alpha must lie in (0, 2) to be reparameterised")
    p = alpha / 2.0
    return torch.tensor(math.log(p / (1.0 - p)), dtype=DTYPE)


@dataclass(frozen=True)
class RobustFit:
    alpha: float
    c: float
    nll: float


def fit_robust_params(
    residuals: ArrayLike,
    alpha0: float = 1.0,
    c0: Optional[float] = None,
    fit_scale: bool = True,
    iterations: int = 400,
    lr: float = 0.1,
) -> RobustFit:
    """Fit alpha (and optionally c) to residuals by minimising the mean NLL."""
    x = as_float(residuals).detach().reshape(-1)
    if x.numel() == 0:
        raise InvalidArgumentError("need at least one residual")
    if c0 is None:
        c0 = float(torch.median(torch.abs(x))) or 1.0
    raw = raw_from_alpha(alpha0).clone().requires_grad_(True)
    log_c = torch.tensor(math.log(c0), dtype=DTYPE, requires_grad=fit_scale)
    params = [raw, log_c] if fit_scale else [raw]
    opt = torch.optim.Adam(params, lr=lr)
    for _ in range(iterations):
        opt.zero_grad()
        loss = robust_nll(x, alpha_from_raw(raw), torch.exp(log_c)).mean()
        loss.backward()
        opt.step()
    with torch.no_grad():
        alpha = alpha_from_raw(raw)
        nll = robust_nll(x, alpha, torch.exp(log_c)).mean()
    logger.debug("Fitted robust params alpha=%.4f c=%.4g nll=%.5f", float(alpha), float(torch.exp(log_c)), float(nll))
    return RobustFit(alpha=float(alpha), c=float(torch.exp(log_c)), nll=float(nll))
