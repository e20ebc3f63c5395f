"""Pydantic schemas for cameras, losses, scenes and experiments.

These are the serialisable configuration objects. They validate the
invariants of the corresponding domain types so that the numerical core can
assume well-formed parameters.
"""

import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, root_validator, validator

# Synthetic scene class schema.
VOID, ROAD, BUILDING, VEHICLE, PEDESTRIAN, RIDER = range(6)
CLASS_NAMES = ("void", "road", "building", "vehicle", "pedestrian", "rider")
NUM_CLASSES = len(CLASS_NAMES)

TOGGLE_NAMES = ("robust_loss", "dynamic_mask", "auto_mask", "csdcl", "smoothness")


class CameraConfig(BaseModel):
    """Camera intrinsics as stored in JSON/TOML files."""

    kind: str = "pinhole"
    fx: Optional[float] = None
    fy: Optional[float] = None
    cx: float
    cy: float
    poly: Optional[Tuple[float, float, float, float]] = None
    width: int
    height: int
    theta_max: float = 0.55 * math.pi

    @validator("kind")
    def _known_kind(cls, v: str) -> str:
        if v not in ("pinhole", "fisheye"):
            raise ValueError("kind must be 'pinhole' or 'fisheye'")
        return v

    @root_validator(skip_on_failure=True)
    def _kind_fields(cls, values):
        if values["kind"] == "pinhole":
            if values.get("fx") is None or values.get("fy") is None:
                raise ValueError("pinhole camera needs fx and fy")
        elif values.get("poly") is None:
            raise ValueError("fisheye camera needs poly (a1..a4)")
        return values


class RobustParams(BaseModel):
    """Shape ``alpha`` and scale ``c`` of the general robust loss."""

    alpha: float = 1.0
    c: float = 0.01
    adaptive: bool = False

    @validator("c")
    def _positive_scale(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("c must be > 0")
        return v

    @root_validator(skip_on_failure=True)
    def _adaptive_range(cls, values):
        if values["adaptive"] and not 0.0 < values["alpha"] < 2.0:
            raise ValueError("adaptive alpha must lie in (0, 2)")
        return values


class LossConfig(BaseModel):
    """Weights of the distance objective and the dynamic-object policy."""

    omega: float = Field(0.85, ge=0.0, le=1.0)
    beta: float = Field(1e-3, ge=0.0)
    gamma: float = Field(1e-2, ge=0.0)
    epsilon: float = Field(0.4, ge=0.0, le=1.0)
    ssim_window: int = 3
    dc_classes: List[int] = [VEHICLE, PEDESTRIAN, RIDER]
    motion_threshold: float = Field(0.25, ge=0.0, le=1.0)
    clip_quantile: Optional[float] = Field(None, gt=0.0, le=1.0)

    @validator("ssim_window")
    def _odd_window(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")
        return v


class OptimizerConfig(BaseModel):
    """Gradient descent with Armijo backtracking."""

    iterations: int = Field(500, ge=0)
    step_size: float = Field(1.0, gt=0.0)
    armijo: float = Field(1e-4, gt=0.0, lt=1.0)
    shrink: float = Field(0.5, gt=0.0, lt=1.0)
    grow: float = Field(2.0, ge=1.0)
    max_backtracks: int = Field(40, ge=1)
    optimize_pose: bool = False


class Toggles(BaseModel):
    """Ablation axes; each toggle is independent of the others."""

    robust_loss: bool = True
    dynamic_mask: bool = True
    auto_mask: bool = True
    csdcl: bool = False
    smoothness: bool = True

    def label(self) -> str:
        return ",".join(f"{name}={int(getattr(self, name))}" for name in TOGGLE_NAMES)


class PlaneSpec(BaseModel):
    """Infinite textured plane ``n · X = offset`` in frame-t coordinates."""

    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 5.0
    texture_id: int = 0
    class_id: int = BUILDING

    @validator("normal")
    def _unit_normal(cls, v):
        norm = math.sqrt(sum(c * c for c in v))
        if norm == 0:
            raise ValueError("plane normal must be non-zero")
        return tuple(c / norm for c in v)


class ObjectSpec(BaseModel):
    """Fronto-parallel billboard: pixel rectangle and depth in frame t."""

    class_id: int = VEHICLE
    rect: Tuple[int, int, int, int]  # u0, v0, u1, v1 (exclusive upper bounds)
    depth: float = Field(..., gt=0.0)
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    texture_id: int = 10

    @validator("rect")
    def _ordered(cls, v):
        u0, v0, u1, v1 = v
        if u1 <= u0 or v1 <= v0:
            raise ValueError("rect must satisfy u0 < u1 and v0 < v1")
        return v


class SceneSpec(BaseModel):
    """Everything needed to render a three-frame synthetic sequence."""

    camera: CameraConfig
    planes: List[PlaneSpec] = [PlaneSpec()]
    objects: List[ObjectSpec] = []
    ego_twist: Tuple[float, float, float, float, float, float] = (0.0, 0.0, 0.0, 0.3, 0.0, 0.0)
    texture_seed: int = 0
    texture_cell: float = 1.6
    noise: float = Field(0.0, ge=0.0)
    outlier_fraction: float = Field(0.0, ge=0.0, le=1.0)

    @validator("objects", each_item=True)
    def _in_frustum(cls, obj: ObjectSpec, values):
        cam = values.get("camera")
        if cam is not None:
            u0, v0, u1, v1 = obj.rect
            if u0 < 0 or v0 < 0 or u1 > cam.width or v1 > cam.height:
                raise ValueError("object rect must lie inside the image in frame t")
        return obj


class ExperimentConfig(BaseModel):
    """Resolved experiment: scene, objective settings, ablations and seeds."""

    name: str = "experiment"
    scene: SceneSpec
    loss: LossConfig = LossConfig()
    robust: RobustParams = RobustParams()
    optimizer: OptimizerConfig = OptimizerConfig()
    toggles: Toggles = Toggles()
    ablate: List[str] = []
    seeds: List[int] = [0]
    init_scale: float = Field(2.0, gt=0.0)
    static_reference: bool = False
    out_dir: Optional[str] = None
    fd_tol: float = Field(1e-3, gt=0.0)

    @validator("ablate", each_item=True)
    def _known_toggle(cls, v: str) -> str:
        if v not in TOGGLE_NAMES:
            raise ValueError(f"unknown toggle {v!r}; expected one of {', '.join(TOGGLE_NAMES)}")
        return v
