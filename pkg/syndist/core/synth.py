"""Synthetic three-frame scenes with exact ground truth, and evaluation metrics.

Scenes are ray cast analytically: every pixel of frames t-1, t and t+1 casts
its camera ray into frame-t coordinates and takes the nearest hit among
textured planes and fronto-parallel billboard objects. Distances are exact
ray parameters, so they are z-depth for pinhole cameras and radial distance
for fisheye cameras. Textures are three-octave value noise keyed by the scene
seed and each primitive's texture id, so renders are deterministic.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.metrics import confusion_matrix

from syndist.core.geometry import CameraModel, Pose, se3_exp
from syndist.core.tensor import ArrayLike, DistanceMap, Image, SegMask, as_float, as_labels, check_same_shape
from syndist.errors import DegenerateInputError, InvalidArgumentError
from syndist.schemas import VOID, ObjectSpec, SceneSpec

logger = logging.getLogger(__name__)

FRAMES = (-1, 0, 1)
SOURCE_FRAMES = (-1, 1)
FAR_DISTANCE = 100.0
LATTICE = 256
OCTAVES = 3
DEFAULT_CAP = 40.0
METRIC_FLOOR = 1e-3


# -- texture -------------------------------------------------------------------


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _lattice(seed: int, texture_id: int, octave: int) -> np.ndarray:
    rng = np.random.default_rng([seed, texture_id, octave])
    return rng.random((LATTICE, LATTICE, 3))


def texture(coords: np.ndarray, seed: int, texture_id: int, cell: float = 1.6) -> np.ndarray:
    """RGB value noise at surface coordinates (N x 2, metres), in [0.1, 0.9]."""
    total = np.zeros((coords.shape[0], 3))
    weight = 0.0
    for octave in range(OCTAVES):
        amp = 0.5**octave
        p = coords / (cell * amp)
        i = np.floor(p).astype(np.int64)
        f = _smoothstep(p - i)
        lat = _lattice(seed, texture_id, octave)
        i0, j0 = i[:, 0] % LATTICE, i[:, 1] % LATTICE
        i1, j1 = (i0 + 1) % LATTICE, (j0 + 1) % LATTICE
        fu, fv = f[:, :1], f[:, 1:]
        value = (
            (1 - fu) * (1 - fv) * lat[i0, j0]
            + fu * (1 - fv) * lat[i1, j0]
            + (1 - fu) * fv * lat[i0, j1]
            + fu * fv * lat[i1, j1]
        )
        total += amp * value
        weight += amp
    return 0.1 + 0.8 * total / weight


def _plane_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, normal)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


# -- ground truth --------------------------------------------------------------


@dataclass
class GroundTruth:
    """Rendered frames keyed by offset from t, with T_{t->t'} for t' = t+-1."""

    spec: SceneSpec
    camera: CameraModel
    images: Dict[int, Image]
    distances: Dict[int, DistanceMap]
    segmentations: Dict[int, SegMask]
    poses: Dict[int, Pose]

    @property
    def I_t(self) -> Image:
        return self.images[0]

    @property
    def D_t(self) -> DistanceMap:
        return self.distances[0]

    @property
    def M_t(self) -> SegMask:
        return self.segmentations[0]

    @property
    def sources(self) -> List[Image]:
        return [self.images[f] for f in SOURCE_FRAMES]

    @property
    def source_segmentations(self) -> List[SegMask]:
        return [self.segmentations[f] for f in SOURCE_FRAMES]

    @property
    def source_distances(self) -> List[DistanceMap]:
        return [self.distances[f] for f in SOURCE_FRAMES]

    @property
    def source_poses(self) -> List[Pose]:
        return [self.poses[f] for f in SOURCE_FRAMES]


def camera_velocity(ego_twist: ArrayLike) -> np.ndarray:
    """Displacement of the camera centre from t to t+1, in frame-t coordinates.

    An object given this velocity stays pixel-identical across frames only
    when ``ego_twist`` is a pure translation; any rotation still moves it in
    the image.
    """
    pose = se3_exp(ego_twist)
    R = pose.rotation.detach().numpy()
    t = pose.translation.detach().numpy()
    return -R.T @ t


def _billboard_bounds(cam: CameraModel, obj: ObjectSpec) -> Tuple[float, float, float, float]:
    u0, v0, u1, v1 = obj.rect
    corners = np.array([[u0 - 0.5, v0 - 0.5], [u1 - 0.5, v0 - 0.5], [u0 - 0.5, v1 - 0.5], [u1 - 0.5, v1 - 0.5]])
    rays = cam.rays(corners, strict=False).numpy()
    xy = rays[:, :2] * (obj.depth / rays[:, 2:3])
    return xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max()


@np.errstate(divide="ignore", invalid="ignore")
def _render_frame(spec: SceneSpec, cam: CameraModel, pose: Pose, frame: int):
    rays, ray_ok = cam.grid_rays()
    R = pose.rotation.detach().numpy()
    t = pose.translation.detach().numpy()
    origin = -R.T @ t
    dirs = rays.numpy() @ R
    ok = ray_ok.numpy()
    h, w = cam.height, cam.width

    best = np.full((h, w), np.inf)
    image = np.zeros((h, w, 3))
    seg = np.full((h, w), VOID, dtype=np.int64)

    def paint(s: np.ndarray, hit: np.ndarray, local: np.ndarray, texture_id: int, class_id: int) -> None:
        win = hit & (s < best)
        if not win.any():
            return
        best[win] = s[win]
        seg[win] = class_id
        image[win] = texture(local[win], spec.texture_seed, texture_id, spec.texture_cell)

    for plane in spec.planes:
        n = np.asarray(plane.normal)
        denom = dirs @ n
        s = (plane.offset - n @ origin) / denom
        hit = ok & (np.abs(denom) > 1e-12) & (s > 1e-6)
        points = origin + s[..., None] * dirs
        e1, e2 = _plane_basis(n)
        paint(s, hit, np.stack((points @ e1, points @ e2), axis=-1), plane.texture_id, plane.class_id)

    for obj in spec.objects:
        shift = np.asarray(obj.velocity) * frame
        x0, x1, y0, y1 = _billboard_bounds(cam, obj)
        denom = dirs[..., 2]
        s = (obj.depth + shift[2] - origin[2]) / denom
        points = origin + s[..., None] * dirs - shift
        inside = (points[..., 0] >= x0) & (points[..., 0] <= x1) & (points[..., 1] >= y0) & (points[..., 1] <= y1)
        hit = ok & (np.abs(denom) > 1e-12) & (s > 1e-6) & inside
        paint(s, hit, points[..., :2], obj.texture_id, obj.class_id)

    distance = np.where(np.isfinite(best), best, FAR_DISTANCE)
    return image, distance, seg, np.isfinite(best)


def _corrupt(image: np.ndarray, spec: SceneSpec, frame: int) -> np.ndarray:
    rng = np.random.default_rng([spec.texture_seed, 7919, frame + 1])
    if spec.noise > 0:
        image = np.clip(image + rng.normal(0.0, spec.noise, image.shape), 0.0, 1.0)
    if spec.outlier_fraction > 0:
        hit = rng.random(image.shape[:2]) < spec.outlier_fraction
        salt = rng.random(image.shape[:2]) < 0.5
        image = image.copy()
        image[hit] = np.where(salt[hit], 1.0, 0.0)[:, None]
    return image


def make_scene(spec: SceneSpec) -> GroundTruth:
    """Render frames t-1, t, t+1 with T_{t->t+1} = exp(xi) and T_{t->t-1} = exp(-xi)."""
    cam = CameraModel.from_config(spec.camera)
    twist = torch.tensor(spec.ego_twist, dtype=torch.float64)
    poses = {1: se3_exp(twist), -1: se3_exp(-twist)}
    images, distances, segs = {}, {}, {}
    for frame in FRAMES:
        pose = poses.get(frame, Pose.identity())
        image, distance, seg, hit = _render_frame(spec, cam, pose, frame)
        if frame == 0 and not hit.any():
            raise InvalidArgumentError("empty frustum: no primitive is visible in frame t")
        images[frame] = torch.from_numpy(_corrupt(image, spec, frame))
        distances[frame] = torch.from_numpy(distance)
        segs[frame] = torch.from_numpy(seg)
    logger.debug(
        "Rendered %dx%d %s scene: %d planes, %d objects",
        cam.width, cam.height, cam.kind, len(spec.planes), len(spec.objects),
    )
    return GroundTruth(spec=spec, camera=cam, images=images, distances=distances, segmentations=segs, poses=poses)


# -- metrics -------------------------------------------------------------------


def psnr(a: ArrayLike, b: ArrayLike, mask: Optional[torch.Tensor] = None, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over the masked pixels."""
    a, b = as_float(a).detach(), as_float(b).detach()
    check_same_shape(a, b, "images")
    err = (a - b) ** 2
    if err.dim() == 3:
        err = err.mean(dim=-1)
    if mask is not None:
        err = err[mask.bool()]
    if err.numel() == 0:
        raise DegenerateInputError("PSNR over an empty region")
    mse = float(err.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def depth_metrics(
    pred: DistanceMap, gt: DistanceMap, cap: float = DEFAULT_CAP, mask: Optional[torch.Tensor] = None
) -> DepthMetrics:
    """Standard depth error and accuracy metrics on pixels with 0 < gt <= cap."""
    pred, gt = as_float(pred).detach(), as_float(gt).detach()
    check_same_shape(pred, gt, "distance maps")
    keep = (gt > 0) & (gt <= cap)
    if mask is not None:
        keep = keep & mask.bool()
    if not bool(keep.any()):
        raise DegenerateInputError("no pixels to evaluate")
    p = pred[keep].clamp(METRIC_FLOOR, cap)
    g = gt[keep].clamp(METRIC_FLOOR, cap)
    diff = p - g
    ratio = torch.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float((diff.abs() / g).mean()),
        sq_rel=float((diff**2 / g).mean()),
        rmse=float(torch.sqrt((diff**2).mean())),
        rmse_log=float(torch.sqrt(((torch.log(p) - torch.log(g)) ** 2).mean())),
        a1=float((ratio < 1.25).double().mean()),
        a2=float((ratio < 1.25**2).double().mean()),
        a3=float((ratio < 1.25**3).double().mean()),
    )


def miou(pred: SegMask, gt: SegMask, num_classes: int, ignore_index: Optional[int] = VOID) -> float:
    """Mean IoU over the classes present in ``gt``."""
    pred, gt = as_labels(pred).reshape(-1).numpy(), as_labels(gt).reshape(-1).numpy()
    if pred.shape != gt.shape:
        raise InvalidArgumentError("segmentation masks must have equal shapes")
    if ignore_index is not None:
        keep = gt != ignore_index
        pred, gt = pred[keep], gt[keep]
    if gt.size == 0:
        return math.nan
    labels: Sequence[int] = range(num_classes)
    cm = confusion_matrix(gt, pred, labels=list(labels))
    tp = np.diag(cm)
    present = cm.sum(axis=1) > 0
    if ignore_index is not None and 0 <= ignore_index < num_classes:
        present[ignore_index] = False
    if not present.any():
        return math.nan
    union = cm.sum(axis=1) + cm.sum(axis=0) - tp
    return float(np.mean(tp[present] / union[present]))
