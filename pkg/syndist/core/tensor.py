"""Tensor conventions shared by the numerical core.

All dense maps are float64 torch tensors laid out row-major:

* Image        H x W x C, values in [0, 1], C in {1, 3}
* DistanceMap  H x W, metres
* SegMask      H x W, int64 class ids
* ValidityMask H x W, bool
* FeatureMap   H x W x D
"""

from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from syndist.errors import InvalidArgumentError

DTYPE = torch.float64

ArrayLike = Union[torch.Tensor, np.ndarray, float, list]
Image = torch.Tensor
DistanceMap = torch.Tensor
SegMask = torch.Tensor
ValidityMask = torch.Tensor
FeatureMap = torch.Tensor


def as_float(x: ArrayLike) -> torch.Tensor:
    """Convert to a float64 tensor without copying float64 tensors."""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def as_labels(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.long()
    return torch.as_tensor(np.asarray(x, dtype=np.int64))


def as_image(x: ArrayLike) -> Image:
    """Validate an H x W x C image; a bare H x W array gains a channel axis."""
    img = as_float(x)
    if img.dim() == 2:
        img = img.unsqueeze(-1)
    if img.dim() != 3 or img.shape[-1] not in (1, 3):
        raise InvalidArgumentError(f"image must be HxWxC with C in {{1,3}}, got {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise InvalidArgumentError("image contains non-finite values")
    return img


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what} must have equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")


def pixel_grid(height: int, width: int) -> torch.Tensor:
    """H x W x 2 grid of (u, v) pixel-centre coordinates, (0, 0) top-left."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE), torch.arange(width, dtype=DTYPE), indexing="ij"
    )
    return torch.stack((u, v), dim=-1)


def pad_hw(x: torch.Tensor, pad: int) -> torch.Tensor:
    """Reflect-pad the spatial axes of an H x W x C tensor.

    Sides too short for reflection (pad >= side) fall back to replicate.
    """
    if pad == 0:
        return x
    h, w = x.shape[0], x.shape[1]
    mode = "reflect" if pad < h and pad < w else "replicate"
    chw = x.permute(2, 0, 1).unsqueeze(0)
    out = F.pad(chw, (pad, pad, pad, pad), mode=mode)
    return out.squeeze(0).permute(1, 2, 0)


def neighborhoods(x: torch.Tensor, k: int) -> torch.Tensor:
    """k x k neighbourhoods of every pixel: H x W x C -> H x W x k*k x C.

    Block positions are enumerated row-major, offset (a - i, b - j) from
    (-(k//2), -(k//2)) to (k//2, k//2).
    """
    h, w, c = x.shape
    padded = pad_hw(x, k // 2).permute(2, 0, 1).unsqueeze(0)
    cols = F.unfold(padded, kernel_size=k)  # 1 x C*k*k x H*W
    return cols.view(c, k * k, h, w).permute(2, 3, 1, 0)
