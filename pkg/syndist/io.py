"""File formats: PNG images, PFM distance maps, parameter blobs, configs, figures.

Every writer goes through ``atomic_write_bytes`` so concurrent runs never
leave a half-written artifact behind.
"""

import io
import json
import logging
import os
import struct
import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, Mapping, Optional, Type, TypeVar, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image as PILImage  # noqa: E402
from pydantic import BaseModel, ValidationError  # noqa: E402

from syndist.core.synth import FAR_DISTANCE, GroundTruth  # noqa: E402
from syndist.errors import ConfigError, InvalidArgumentError  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ModelT = TypeVar("ModelT", bound=BaseModel)


def _numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str))


# -- images --------------------------------------------------------------------


def save_png(path: PathLike, image) -> Path:
    """Save an H x W (x C) float image in [0, 1] as 8-bit PNG."""
    arr = _numpy(image).astype(np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8).save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def load_png(path: PathLike) -> torch.Tensor:
    """Load an 8-bit PNG as a float64 H x W x C tensor in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L" if im.mode == "L" else "RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(arr)


def save_labels(path: PathLike, labels) -> Path:
    """Save a class-id map as a single-channel 8-bit PNG."""
    arr = _numpy(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise InvalidArgumentError("class ids must fit in 8 bits")
    buf = io.BytesIO()
    PILImage.fromarray(arr.astype(np.uint8), mode="L").save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def load_labels(path: PathLike) -> torch.Tensor:
    with PILImage.open(path) as im:
        return torch.from_numpy(np.asarray(im, dtype=np.int64))


# -- PFM -----------------------------------------------------------------------


def save_pfm(path: PathLike, distance) -> Path:
    """Single-channel little-endian PFM, rows stored bottom-up as the format requires."""
    arr = _numpy(distance).astype("<f4")
    if arr.ndim != 2:
        raise InvalidArgumentError("PFM writer expects an H x W map")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return atomic_write_bytes(path, header + np.flipud(arr).tobytes())


def load_pfm(path: PathLike) -> torch.Tensor:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise InvalidArgumentError(f"{path} is not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        channels = 1 if kind == b"Pf" else 3
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return torch.from_numpy(np.flipud(data.reshape(shape)).astype(np.float64))


# -- parameter blobs -----------------------------------------------------------


def save_param_blob(path: PathLike, params: Mapping[str, object]) -> Path:
    """uint32-LE header length, JSON header {name: {shape, offset}}, float32-LE data."""
    header: Dict[str, dict] = {}
    chunks = []
    offset = 0
    for name, value in params.items():
        arr = np.ascontiguousarray(_numpy(value), dtype="<f4")
        header[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.size
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return atomic_write_bytes(path, struct.pack("<I", len(head)) + head + b"".join(chunks))


def load_param_blob(path: PathLike) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4 : 4 + n].decode("utf-8"))
    data = np.frombuffer(raw, dtype="<f4", offset=4 + n)
    out = {}
    for name, entry in header.items():
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        out[name] = data[start : start + size].reshape(entry["shape"]).astype(np.float64)
    return out


# -- configs -------------------------------------------------------------------


def load_config(path: PathLike, model: Type[ModelT]) -> ModelT:
    """Parse a ``.json`` or ``.toml`` file into ``model``; failures raise ``ConfigError``."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        elif path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            raise ConfigError(f"unsupported config format {path.suffix!r} (use .json or .toml)")
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        return model.parse_obj(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__} in {path}: {e}") from e


# -- visualisation -------------------------------------------------------------


def colorize(values, vmin: Optional[float] = None, vmax: Optional[float] = None, cmap: str = "magma") -> np.ndarray:
    """Map an H x W array to RGB in [0, 1] with a matplotlib colormap."""
    arr = _numpy(values).astype(np.float64)
    lo = float(np.nanmin(arr)) if vmin is None else vmin
    hi = float(np.nanmax(arr)) if vmax is None else vmax
    norm = np.clip((arr - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    return plt.get_cmap(cmap)(norm)[..., :3]


def save_panels(path: PathLike, panels: Mapping[str, np.ndarray], title: Optional[str] = None) -> Path:
    """One row of titled image panels, saved as PNG."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 2.2), dpi=120, squeeze=False)
    for ax, (name, img) in zip(axes[0], panels.items()):
        ax.imshow(np.clip(img, 0.0, 1.0), interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight")
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def refinement_panels(image, gt, refined, mu, cap: float = 40.0) -> Dict[str, np.ndarray]:
    """Input, ground truth, refined distance, error map and the dynamic mask overlay."""
    img = _numpy(image)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = np.repeat(img, 3, axis=-1)
    gt_np, ref_np = _numpy(gt), _numpy(refined)
    inv_hi = 1.0 / 0.1
    overlay = img.copy()
    masked = ~_numpy(mu).astype(bool)
    overlay[masked] = 0.5 * overlay[masked] + 0.5 * np.array([1.0, 0.0, 0.0])
    return {
        "input": img,
        "ground truth": colorize(1.0 / np.minimum(gt_np, cap), 0.0, inv_hi),
        "refined": colorize(1.0 / np.minimum(ref_np, cap), 0.0, inv_hi),
        "abs. error": colorize(np.abs(ref_np - gt_np) / gt_np, 0.0, 1.0, cmap="viridis"),
        "dynamic mask": overlay,
    }


def save_ground_truth(gt: GroundTruth, directory: PathLike) -> Path:
    """PNG frames, PNG labels, PFM distances and JSON poses for a rendered scene."""
    directory = Path(directory)
    for frame, image in gt.images.items():
        save_png(directory / f"image_{frame:+d}.png", image)
        save_labels(directory / f"labels_{frame:+d}.png", gt.segmentations[frame])
        save_pfm(directory / f"distance_{frame:+d}.pfm", gt.distances[frame])
    write_json(
        directory / "poses.json",
        {
            "convention": "T_{t->t'} maps frame-t points into frame t'",
            "far_distance": FAR_DISTANCE,
            "poses": {f"{frame:+d}": pose.to_dict() for frame, pose in gt.poses.items()},
            "scene": json.loads(gt.spec.json()),
        },
    )
    logger.info(f"Wrote ground-truth bundle to {directory}")
    return directory
