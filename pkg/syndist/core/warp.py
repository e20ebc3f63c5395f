"""View synthesis: reconstruct the target frame from a source frame.

For every target pixel the distance map gives a 3D point, the pose moves it
into the source frame and the camera projects it onto the source image,
where it is sampled. Sampling never fails: samples outside the source image
or projections the camera rejects are zero-filled (or edge-clamped) and
reported through a validity mask, which every loss uses to restrict its support.

No z-buffering is performed; occlusions are left to the per-pixel minimum
over source frames.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import torch

from syndist.core.geometry import BOUNDS_TOL, CameraModel, Pose
from syndist.core.tensor import (
    DistanceMap,
    Image,
    SegMask,
    ValidityMask,
    as_float,
    as_labels,
    check_same_shape,
)
from syndist.errors import InvalidArgumentError, UnsupportedGradientError

logger = logging.getLogger(__name__)

MODES = ("bilinear", "nearest")
PADDINGS = ("zeros", "border")


@dataclass(frozen=True)
class WarpedDistancePair:
    """Distances of warped target points versus the other frame's estimate."""

    transformed: torch.Tensor
    sampled: torch.Tensor
    valid: ValidityMask


def _in_bounds(coords: torch.Tensor, height: int, width: int) -> ValidityMask:
    u, v = coords[..., 0].detach(), coords[..., 1].detach()
    finite = torch.isfinite(u) & torch.isfinite(v)
    tol = BOUNDS_TOL
    return finite & (u >= -tol) & (u <= width - 1 + tol) & (v >= -tol) & (v <= height - 1 + tol)


def _gather(values: torch.Tensor, iu: torch.Tensor, iv: torch.Tensor) -> torch.Tensor:
    h, w = values.shape[0], values.shape[1]
    flat = values.reshape(h * w, -1)
    idx = (iv * w + iu).reshape(-1)
    return flat[idx].reshape(*iu.shape, flat.shape[-1])


def sample(
    img: torch.Tensor, coords: torch.Tensor, mode: str = "bilinear", padding: str = "zeros"
) -> Tuple[torch.Tensor, ValidityMask]:
    """Sample ``img`` (H x W or H x W x C) at continuous pixel ``coords`` (... x 2).

    Bilinear sampling weights the four neighbours; nearest rounds half up.
    Out-of-bounds samples have validity 0 and read 0, or with
    ``padding="border"`` the nearest edge value, which keeps the output
    continuous in ``coords`` across the image edge.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    if padding not in PADDINGS:
        raise InvalidArgumentError(f"padding must be one of {PADDINGS}, got {padding!r}")
    squeeze = img.dim() == 2
    values = img.unsqueeze(-1) if squeeze else img
    h, w = values.shape[0], values.shape[1]
    valid = _in_bounds(coords, h, w)
    readable = valid if padding == "zeros" else torch.isfinite(coords).all(dim=-1)
    zeros = torch.zeros_like(coords[..., 0])
    u = torch.where(readable, coords[..., 0].clamp(0, w - 1), zeros)
    v = torch.where(readable, coords[..., 1].clamp(0, h - 1), zeros)

    if mode == "nearest":
        if torch.is_grad_enabled() and (coords.requires_grad or values.requires_grad):
            raise UnsupportedGradientError("nearest-neighbour sampling has no gradient")
        iu = torch.floor(u + 0.5).long().clamp(0, w - 1)
        iv = torch.floor(v + 0.5).long().clamp(0, h - 1)
        out = _gather(values, iu, iv)
    else:
        u0 = torch.floor(u.detach()).long().clamp(0, w - 1)
        v0 = torch.floor(v.detach()).long().clamp(0, h - 1)
        u1 = (u0 + 1).clamp(max=w - 1)
        v1 = (v0 + 1).clamp(max=h - 1)
        fu = (u - u0.to(u.dtype)).unsqueeze(-1)
        fv = (v - v0.to(v.dtype)).unsqueeze(-1)
        out = (
            (1 - fu) * (1 - fv) * _gather(values, u0, v0)
            + fu * (1 - fv) * _gather(values, u1, v0)
            + (1 - fu) * fv * _gather(values, u0, v1)
            + fu * fv * _gather(values, u1, v1)
        )

    out = out * readable.unsqueeze(-1).to(out.dtype)
    return (out.squeeze(-1) if squeeze else out), valid


def reproject(
    D_t: DistanceMap, pose: Pose, cam: CameraModel
) -> Tuple[torch.Tensor, ValidityMask, torch.Tensor]:
    """Source-frame pixel coordinates, projection validity and 3D points."""
    D_t = as_float(D_t)
    if D_t.shape != (cam.height, cam.width):
        raise InvalidArgumentError(f"distance map shape {tuple(D_t.shape)} does not match camera")
    if not bool((D_t.detach() > 0).all()):
        raise InvalidArgumentError("distance map must be strictly positive")
    rays, ray_ok = cam.grid_rays()
    points = pose.apply(rays * D_t.unsqueeze(-1))
    uv, ok = cam.project(points)
    return uv, ok & ray_ok, points


def synthesize_view(
    src: Image,
    D_t: DistanceMap,
    pose: Pose,
    cam: CameraModel,
    mode: str = "bilinear",
    padding: str = "zeros",
) -> Tuple[Image, ValidityMask]:
    """Reconstruct the target image from ``src`` given target distances and T_{t->t'}.

    Invalid pixels read 0 unless ``padding="border"``, in which case they keep
    the edge-clamped sample and only the mask marks them.
    """
    uv, ok, _ = reproject(D_t, pose, cam)
    img, in_bounds = sample(as_float(src), uv, mode, padding)
    valid = ok & in_bounds
    if padding == "border":
        return img, valid
    return img * valid.unsqueeze(-1).to(img.dtype), valid


def warp_segmentation(
    M_src: SegMask, D_t: DistanceMap, pose: Pose, cam: CameraModel
) -> Tuple[SegMask, ValidityMask]:
    """Warp a label map into the target frame with nearest-neighbour sampling.

    Invalid pixels carry label 0. Gradient-free by construction.
    """
    labels = as_labels(M_src)
    with torch.no_grad():
        uv, ok, _ = reproject(as_float(D_t).detach(), pose.detach(), cam)
        warped, in_bounds = sample(labels, uv, "nearest")
    valid = ok & in_bounds
    return torch.where(valid, warped, torch.zeros_like(warped)), valid


def project_distances(
    D_t: DistanceMap, D_t_prime: DistanceMap, pose: Pose, cam: CameraModel, padding: str = "zeros"
) -> WarpedDistancePair:
    """Pair the distances of transformed target points with the sampled neighbour estimate."""
    D_t_prime = as_float(D_t_prime)
    check_same_shape(as_float(D_t), D_t_prime, "distance maps")
    uv, ok, points = reproject(D_t, pose, cam)
    transformed = cam.point_distance(points)
    sampled, in_bounds = sample(D_t_prime, uv, "bilinear", padding)
    valid = ok & in_bounds
    if padding == "border":
        return WarpedDistancePair(transformed=transformed, sampled=sampled, valid=valid)
    zero = torch.zeros_like(transformed)
    return WarpedDistancePair(
        transformed=torch.where(valid, transformed, zero),
        sampled=torch.where(valid, sampled, zero),
        valid=valid,
    )
