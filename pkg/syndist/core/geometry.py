"""Camera models, rigid transforms and metric scale recovery.

Two camera kinds share one interface:

* ``pinhole``: rays are (x/z, y/z, 1); the per-pixel quantity is z-depth.
* ``fisheye``: polynomial r(theta) = a1*theta + a2*theta^2 + a3*theta^3 + a4*theta^4
  mapping incidence angle to pixel radius; the per-pixel quantity is the
  radial distance ||p||.

Projection is written in torch so gradients flow from pixels back to points
and poses. Ray directions depend on pixels only and are computed without
autograd.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from syndist.core.tensor import DTYPE, ArrayLike, as_float, pixel_grid
from syndist.errors import DegenerateScaleError, InvalidArgumentError, OutOfRangeError
from syndist.schemas import CameraConfig

logger = logging.getLogger(__name__)

LUT_SIZE = 1024
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 20
SCALE_TOL = 1e-8
# Coordinates this close outside the image still count as inside.
BOUNDS_TOL = 1e-6


class Point3(NamedTuple):
    """A point in a camera frame, metres."""

    x: float
    y: float
    z: float

    @property
    def distance(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor([self.x, self.y, self.z], dtype=DTYPE)


@dataclass(frozen=True)
class CameraModel:
    """Immutable camera intrinsics with project/unproject."""

    kind: str
    width: int
    height: int
    cx: float
    cy: float
    fx: Optional[float] = None
    fy: Optional[float] = None
    poly: Optional[Tuple[float, float, float, float]] = None
    theta_max: float = 0.55 * math.pi

    def __post_init__(self) -> None:
        if self.kind not in ("pinhole", "fisheye"):
            raise InvalidArgumentError(f"unknown camera kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")
        if self.kind == "pinhole":
            if self.fx is None or self.fy is None or self.fx <= 0 or self.fy <= 0:
                raise InvalidArgumentError("pinhole camera needs fx > 0 and fy > 0")
        else:
            if self.poly is None or len(self.poly) != 4:
                raise InvalidArgumentError("fisheye camera needs four polynomial coefficients")
            object.__setattr__(self, "poly", tuple(float(a) for a in self.poly))
            if not 0 < self.theta_max < math.pi:
                raise InvalidArgumentError("theta_max must lie in (0, pi)")
            if not np.all(np.diff(self._lut[1]) > 0):
                raise InvalidArgumentError("fisheye r(theta) must be strictly increasing on [0, theta_max]")

    @classmethod
    def pinhole(cls, fx: float, fy: float, cx: float, cy: float, width: int, height: int) -> "CameraModel":
        return cls(kind="pinhole", fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)

    @classmethod
    def fisheye(
        cls,
        poly: Sequence[float],
        cx: float,
        cy: float,
        width: int,
        height: int,
        theta_max: float = 0.55 * math.pi,
    ) -> "CameraModel":
        return cls(kind="fisheye", poly=tuple(poly), cx=cx, cy=cy, width=width, height=height, theta_max=theta_max)

    @classmethod
    def from_config(cls, cfg: CameraConfig) -> "CameraModel":
        return cls(
            kind=cfg.kind,
            fx=cfg.fx,
            fy=cfg.fy,
            cx=cfg.cx,
            cy=cfg.cy,
            poly=cfg.poly,
            width=cfg.width,
            height=cfg.height,
            theta_max=cfg.theta_max,
        )

    @property
    def is_fisheye(self) -> bool:
        return self.kind == "fisheye"

    # -- fisheye polynomial -------------------------------------------------

    def radius(self, theta):
        """Pixel radius r(theta); works on floats, numpy arrays and tensors."""
        a1, a2, a3, a4 = self.poly
        return theta * (a1 + theta * (a2 + theta * (a3 + theta * a4)))

    def _radius_slope(self, theta):
        a1, a2, a3, a4 = self.poly
        return a1 + theta * (2 * a2 + theta * (3 * a3 + theta * 4 * a4))

    @cached_property
    def _lut(self) -> Tuple[np.ndarray, np.ndarray]:
        theta = np.linspace(0.0, self.theta_max, LUT_SIZE)
        return theta, self.radius(theta)

    @property
    def max_radius(self) -> float:
        return float(self._lut[1][-1])

    def theta_of_radius(self, r: ArrayLike) -> np.ndarray:
        """Invert r(theta) by Newton iteration seeded from the lookup table."""
        r = np.asarray(r, dtype=np.float64)
        if np.any(r < 0) or np.any(r > self.max_radius * (1 + 1e-12)):
            raise OutOfRangeError(f"pixel radius outside invertible range [0, {self.max_radius:.6g}]")
        theta_grid, r_grid = self._lut
        theta = np.interp(r, r_grid, theta_grid)
        for _ in range(NEWTON_MAX_ITER):
            step = (self.radius(theta) - r) / self._radius_slope(theta)
            theta = np.clip(theta - step, 0.0, self.theta_max)
            if np.all(np.abs(step) < NEWTON_TOL):
                break
        return theta

    # -- rays, unprojection, projection ------------------------------------

    def rays(self, uv: ArrayLike, strict: bool = True) -> torch.Tensor:
        """Per-pixel ray so that ``point = ray * distance``.

        Pinhole rays have unit z (distance is z-depth); fisheye rays have unit
        norm (distance is radial). With ``strict=False`` fisheye radii beyond
        r(theta_max) are clamped instead of raising; see ``grid_rays``.
        """
        uv = as_float(uv).detach().numpy()
        du = uv[..., 0] - self.cx
        dv = uv[..., 1] - self.cy
        if not self.is_fisheye:
            out = np.stack((du / self.fx, dv / self.fy, np.ones_like(du)), axis=-1)
            return torch.from_numpy(out)
        rho = np.hypot(du, dv)
        theta = self.theta_of_radius(rho if strict else np.minimum(rho, self.max_radius))
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(rho > 0, np.sin(theta) / np.where(rho > 0, rho, 1.0), 0.0)
        out = np.stack((du * scale, dv * scale, np.cos(theta)), axis=-1)
        return torch.from_numpy(out)

    def grid_rays(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Rays for every pixel centre plus the mask of invertible pixels."""
        return self._grid_rays

    @cached_property
    def _grid_rays(self) -> Tuple[torch.Tensor, torch.Tensor]:
        grid = pixel_grid(self.height, self.width)
        if not self.is_fisheye:
            return self.rays(grid), torch.ones(self.height, self.width, dtype=torch.bool)
        rho = torch.hypot(grid[..., 0] - self.cx, grid[..., 1] - self.cy)
        return self.rays(grid, strict=False), rho <= self.max_radius

    def unproject(self, uv: ArrayLike, distance: ArrayLike) -> torch.Tensor:
        """Lift pixels with distances to 3D points in this camera's frame."""
        distance = as_float(distance)
        if not bool((distance > 0).all()):
            raise InvalidArgumentError("distance must be strictly positive")
        return self.rays(uv) * distance.unsqueeze(-1)

    def unproject_pixel(self, u: float, v: float, distance: float) -> Point3:
        p = self.unproject(torch.tensor([u, v], dtype=DTYPE), torch.tensor(distance, dtype=DTYPE))
        return Point3(*(float(c) for c in p))

    def project(self, points: Union[torch.Tensor, Point3]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Project ``... x 3`` points to ``... x 2`` pixels plus a validity flag.

        Projection never raises: points behind a pinhole camera, beyond
        theta_max, or landing outside the image are flagged invalid.
        """
        if isinstance(points, Point3):
            points = points.as_tensor()
        points = as_float(points)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        if self.is_fisheye:
            rho = torch.sqrt(x * x + y * y + 1e-24)
            theta = torch.atan2(rho, z)
            r = self.radius(theta)
            u = self.cx + r * x / rho
            v = self.cy + r * y / rho
            ok = theta <= self.theta_max
        else:
            ok = z > 1e-9
            z_safe = torch.where(ok, z, torch.ones_like(z))
            u = self.cx + self.fx * x / z_safe
            v = self.cy + self.fy * y / z_safe
        uv = torch.stack((u, v), dim=-1)
        ok = ok & torch.isfinite(u) & torch.isfinite(v) & self.in_bounds(uv)
        return uv, ok

    def project_point(self, p: Point3) -> Tuple[Tuple[float, float], bool]:
        uv, ok = self.project(p)
        return (float(uv[0]), float(uv[1])), bool(ok)

    def in_bounds(self, uv: torch.Tensor) -> torch.Tensor:
        u, v = uv[..., 0].detach(), uv[..., 1].detach()
        tol = BOUNDS_TOL
        return (u >= -tol) & (u <= self.width - 1 + tol) & (v >= -tol) & (v <= self.height - 1 + tol)

    def point_distance(self, points: torch.Tensor) -> torch.Tensor:
        """The per-pixel quantity this camera estimates: radial norm or z."""
        if self.is_fisheye:
            return torch.linalg.norm(points, dim=-1)
        return points[..., 2]


# -- SE(3) ---------------------------------------------------------------------


def _hat(w: torch.Tensor) -> torch.Tensor:
    zero = torch.zeros((), dtype=w.dtype)
    return torch.stack(
        (
            torch.stack((zero, -w[2], w[1])),
            torch.stack((w[2], zero, -w[0])),
            torch.stack((-w[1], w[0], zero)),
        )
    )


def _exp_map(twist: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Rodrigues rotation and left-Jacobian translation, differentiable."""
    omega, rho = twist[:3], twist[3:]
    theta_sq = (omega * omega).sum()
    small = theta_sq < 1e-8
    theta = torch.sqrt(torch.where(small, torch.ones_like(theta_sq), theta_sq))
    a = torch.where(small, 1 - theta_sq / 6, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24, (1 - torch.cos(theta)) / theta**2)
    c = torch.where(small, 1.0 / 6 - theta_sq / 120, (theta - torch.sin(theta)) / theta**3)
    K = _hat(omega)
    K2 = K @ K
    eye = torch.eye(3, dtype=twist.dtype)
    R = eye + a * K + b * K2
    V = eye + b * K + c * K2
    return R, V @ rho


@dataclass(frozen=True)
class Pose:
    """Rigid transform T mapping points of one frame into another.

    ``apply(p) = R p + t``. The twist is (axis-angle rotation, translation
    coordinates); tensors may carry autograd history.
    """

    twist: torch.Tensor
    rotation: torch.Tensor = field(repr=False)
    translation: torch.Tensor = field(repr=False)

    @classmethod
    def identity(cls) -> "Pose":
        return se3_exp(torch.zeros(6, dtype=DTYPE))

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.rotation.transpose(0, 1) + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        return Pose(se3_log(R, t), R, t)

    def inverse(self) -> "Pose":
        R = self.rotation.transpose(0, 1)
        return Pose(-self.twist, R, -(R @ self.translation))

    def scaled(self, k: float) -> "Pose":
        """Same rotation, translation multiplied by ``k``."""
        twist = torch.cat((self.twist[:3], self.twist[3:] * k))
        return Pose(twist, self.rotation, self.translation * k)

    def detach(self) -> "Pose":
        return Pose(self.twist.detach(), self.rotation.detach(), self.translation.detach())

    def matrix(self) -> torch.Tensor:
        T = torch.eye(4, dtype=DTYPE)
        T[:3, :3] = self.rotation.detach()
        T[:3, 3] = self.translation.detach()
        return T

    def to_dict(self) -> dict:
        return {
            "twist": self.twist.detach().tolist(),
            "rotation": self.rotation.detach().tolist(),
            "translation": self.translation.detach().tolist(),
        }


def se3_exp(twist: ArrayLike) -> Pose:
    """Exponential map of a 6-vector twist (rotation first) to a Pose."""
    twist = as_float(twist)
    if twist.shape != (6,):
        raise InvalidArgumentError(f"twist must be a 6-vector, got shape {tuple(twist.shape)}")
    if not bool(torch.isfinite(twist).all()):
        raise InvalidArgumentError("twist must be finite")
    if float(torch.linalg.norm(twist[:3].detach())) >= math.pi:
        raise OutOfRangeError("rotation angle must be below pi (principal branch)")
    R, t = _exp_map(twist)
    return Pose(twist, R, t)


def se3_log(rotation: torch.Tensor, translation: torch.Tensor) -> torch.Tensor:
    """Twist of a rigid transform on the principal branch (no autograd)."""
    R = rotation.detach().numpy()
    t = translation.detach().numpy()
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_theta)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        omega = 0.5 * vee
    else:
        omega = theta / (2.0 * math.sin(theta)) * vee
    K = np.array([[0, -omega[2], omega[1]], [omega[2], 0, -omega[0]], [-omega[1], omega[0], 0]])
    if theta < 1e-6:
        v_inv = np.eye(3) - 0.5 * K + K @ K / 12.0
    else:
        coeff = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / theta**2
        v_inv = np.eye(3) - 0.5 * K + coeff * K @ K
    return torch.from_numpy(np.concatenate((omega, v_inv @ t)))


# -- scale ---------------------------------------------------------------------


def recover_scale(odometry_translation: ArrayLike, estimated_translation: ArrayLike) -> float:
    """Metric scale factor from odometry versus the estimated translation.

    Vectors are compared by their norms.
    """
    odo = float(np.linalg.norm(np.atleast_1d(np.asarray(odometry_translation, dtype=np.float64))))
    est = float(np.linalg.norm(np.atleast_1d(np.asarray(estimated_translation, dtype=np.float64))))
    if est <= SCALE_TOL:
        raise DegenerateScaleError(f"estimated translation {est:.3g} too small to recover scale")
    return odo / est


def apply_scale(distance: torch.Tensor, pose: Pose, scale: float) -> Tuple[torch.Tensor, Pose]:
    """Metric distances and pose from up-to-scale estimates."""
    return distance * scale, pose.scaled(scale)
