"""Forward kernels of the encoder/decoder building blocks.

* Single-headed local self-attention over k x k memory blocks, optionally
  modulated by relative position embeddings split into row and column halves.
* Pixel-adaptive convolution: spatial weights modulated per pixel by a
  Gaussian kernel on guidance-feature differences.

Both are forward-only; borders are reflect-padded so every pixel has a full
memory block. No temperature or 1/sqrt(d) scaling is applied to the logits.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np
import torch

from syndist.core.tensor import DTYPE, ArrayLike, FeatureMap, as_float, neighborhoods
from syndist.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def _check_k(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise InvalidArgumentError("neighbourhood extent k must be a positive odd integer")


def _as_feature_map(x: ArrayLike, name: str) -> FeatureMap:
    x = as_float(x)
    if x.dim() == 2:
        x = x.unsqueeze(-1)
    if x.dim() != 3 or x.shape[-1] < 1:
        logger.debug("Rejecting %s with shape %s", name, tuple(x.shape))
        raise InvalidArgumentError(f"{name} must be HxWxD, got {tuple(x.shape)}")
    if not bool(torch.isfinite(x).all()):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class AttentionParams:
    w_q: torch.Tensor  # d_out x d_in
    w_k: torch.Tensor
    w_v: torch.Tensor
    rel_rows: torch.Tensor  # (2k-1) x d_row
    rel_cols: torch.Tensor  # (2k-1) x d_col
    k: int

    def __post_init__(self) -> None:
        _check_k(self.k)
        d_out, d_in = self.w_q.shape
        if self.w_k.shape != (d_out, d_in) or self.w_v.shape != (d_out, d_in):
            raise InvalidArgumentError("W_Q, W_K and W_V must share shape d_out x d_in")
        if self.rel_rows.shape[0] != 2 * self.k - 1 or self.rel_cols.shape[0] != 2 * self.k - 1:
            raise InvalidArgumentError("relative embeddings need 2k-1 rows")
        if self.rel_rows.shape[1] + self.rel_cols.shape[1] != d_out:
            raise InvalidArgumentError("row and column embedding halves must concatenate to d_out")

    @property
    def d_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_out(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def random(cls, d_in: int, d_out: int, k: int, seed: int = 0) -> "AttentionParams":
        gen = torch.Generator().manual_seed(seed)
        d_row = d_out // 2

        def draw(*shape):
            return torch.randn(*shape, generator=gen, dtype=DTYPE) / np.sqrt(max(d_in, 1))

        return cls(
            w_q=draw(d_out, d_in),
            w_k=draw(d_out, d_in),
            w_v=draw(d_out, d_in),
            rel_rows=draw(2 * k - 1, d_row),
            rel_cols=draw(2 * k - 1, d_out - d_row),
            k=k,
        )

    @classmethod
    def from_blob(cls, blob: Dict[str, np.ndarray], k: int) -> "AttentionParams":
        names = ("w_q", "w_k", "w_v", "rel_rows", "rel_cols")
        tensors = {n: torch.from_numpy(np.asarray(blob[n], dtype=np.float64)) for n in names}
        return cls(k=k, **tensors)

    @property
    def rel_embed(self) -> torch.Tensor:
        """(2k-1) x (2k-1) x d_out table indexed by (a-i, b-j) + k - 1."""
        n = 2 * self.k - 1
        rows = self.rel_rows.unsqueeze(1).expand(n, n, -1)
        cols = self.rel_cols.unsqueeze(0).expand(n, n, -1)
        return torch.cat((rows, cols), dim=-1)

    def block_embeddings(self) -> torch.Tensor:
        """k*k x d_out embeddings in the row-major order of ``neighborhoods``."""
        # offsets -(k//2)..k//2 sit at table rows k-1-k//2 .. k-1+k//2
        lo = self.k - 1 - self.k // 2
        window = slice(lo, lo + self.k)
        return self.rel_embed[window, window].reshape(-1, self.d_out)


def attend(query: ArrayLike, block: ArrayLike, p: AttentionParams, use_rel: bool = False) -> torch.Tensor:
    """Attention output for one pixel: ``query`` (d_in) over ``block`` (k*k x d_in)."""
    query, block = as_float(query), as_float(block)
    if query.shape != (p.d_in,) or block.shape != (p.k * p.k, p.d_in):
        logger.debug(
            "Rejecting query %s and block %s for d_in=%d, k=%d", tuple(query.shape), tuple(block.shape), p.d_in, p.k
        )
        raise InvalidArgumentError("query/block shapes do not match the attention parameters")
    q = p.w_q @ query
    keys = block @ p.w_k.T
    values = block @ p.w_v.T
    logits = keys @ q
    if use_rel:
        logits = logits + p.block_embeddings() @ q
    return torch.softmax(logits, dim=0) @ values


def self_attention(
    x: ArrayLike, p: AttentionParams, use_rel: bool = False, return_weights: bool = False
) -> Union[FeatureMap, Tuple[FeatureMap, torch.Tensor]]:
    """Local self-attention at every pixel; optionally returns the H x W x k*k weights."""
    x = _as_feature_map(x, "x")
    if x.shape[-1] != p.d_in:
        logger.debug("Rejecting feature map %s for d_in=%d", tuple(x.shape), p.d_in)
        raise InvalidArgumentError(f"feature depth {x.shape[-1]} does not match d_in={p.d_in}")
    blocks = neighborhoods(x, p.k)
    q = x @ p.w_q.T
    keys = blocks @ p.w_k.T
    values = blocks @ p.w_v.T
    logits = torch.einsum("hwd,hwnd->hwn", q, keys)
    if use_rel:
        logits = logits + torch.einsum("hwd,nd->hwn", q, p.block_embeddings())
    weights = torch.softmax(logits, dim=-1)
    out = torch.einsum("hwn,hwnd->hwd", weights, values)
    return (out, weights) if return_weights else out


@dataclass(frozen=True)
class PACParams:
    weight: torch.Tensor  # k x k x D_in x D_out
    bias: torch.Tensor  # D_out
    sigma: torch.Tensor  # D_out

    def __post_init__(self) -> None:
        if self.weight.dim() != 4 or self.weight.shape[0] != self.weight.shape[1]:
            raise InvalidArgumentError("PAC weight must be k x k x D_in x D_out")
        _check_k(self.weight.shape[0])
        d_out = self.weight.shape[3]
        if self.bias.shape != (d_out,) or self.sigma.shape != (d_out,):
            raise InvalidArgumentError("bias and sigma need one entry per output channel")
        if not bool((self.sigma > 0).all()):
            raise InvalidArgumentError("PAC kernel width sigma must be > 0")

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def random(cls, d_in: int, d_out: int, k: int, sigma: float = 1.0, seed: int = 0) -> "PACParams":
        gen = torch.Generator().manual_seed(seed)
        return cls(
            weight=torch.randn(k, k, d_in, d_out, generator=gen, dtype=DTYPE),
            bias=torch.randn(d_out, generator=gen, dtype=DTYPE),
            sigma=torch.full((d_out,), float(sigma), dtype=DTYPE),
        )


def pac_kernel(F: ArrayLike, sigma: ArrayLike, k: int) -> torch.Tensor:
    """Gaussian adaptation kernel, H x W x k*k x D_out, values in (0, 1]."""
    _check_k(k)
    F = _as_feature_map(F, "guidance")
    sigma = as_float(sigma).reshape(-1)
    if not bool((sigma > 0).all()):
        raise InvalidArgumentError("PAC kernel width sigma must be > 0")
    blocks = neighborhoods(F, k)
    d2 = ((blocks - F.unsqueeze(2)) ** 2).sum(dim=-1)
    return torch.exp(-d2.unsqueeze(-1) / (2.0 * sigma**2))


def pixel_adaptive_conv(x: ArrayLike, F: ArrayLike, p: PACParams) -> FeatureMap:
    """x'(ij) = sum_ab K(F_ij, F_ab) W[a-i, b-j] x(ab) + B."""
    x = _as_feature_map(x, "x")
    F = _as_feature_map(F, "guidance")
    if F.shape[:2] != x.shape[:2]:
        logger.debug("Rejecting guidance %s for input %s", tuple(F.shape), tuple(x.shape))
        raise InvalidArgumentError("guidance and input must share spatial dimensions")
    if x.shape[-1] != p.weight.shape[2]:
        logger.debug("Rejecting input %s for PAC weight %s", tuple(x.shape), tuple(p.weight.shape))
        raise InvalidArgumentError("input depth does not match PAC weights")
    k = p.k
    kernel = pac_kernel(F, p.sigma, k)
    blocks = neighborhoods(x, k)
    w = p.weight.reshape(k * k, p.weight.shape[2], p.weight.shape[3])
    return torch.einsum("hwno,hwni,nio->hwo", kernel, blocks, w) + p.bias
