"""Oracle suite: closed-form values, brute-force references and gradient checks.

``run_checks`` evaluates every oracle on small deterministic inputs and
returns one ``CheckResult`` per check; ``format_table`` renders them for the
terminal. ``fd_tol`` is the relative tolerance used by every
finite-difference comparison.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
import torch

from syndist.core.geometry import CameraModel, Pose
from syndist.core.layers import AttentionParams, PACParams, pixel_adaptive_conv, self_attention
from syndist.core.losses import (
    GradientCheck,
    TaskUncertainty,
    check_gradient,
    csdcl,
    mtl_weighted_loss,
    smoothness_loss,
)
from syndist.core.masking import dynamic_mask
from syndist.core.optim import RefineProblem, distance_objective
from syndist.core.robust import robust_nll, robust_rho
from syndist.core.synth import depth_metrics, make_scene, psnr
from syndist.core.tensor import DTYPE, neighborhoods
from syndist.core.warp import project_distances, synthesize_view
from syndist.schemas import CameraConfig, PlaneSpec, SceneSpec, Toggles

logger = logging.getLogger(__name__)

FD_FRACTION = 0.99
DEFAULT_FD_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _gradient_result(name: str, check: GradientCheck) -> CheckResult:
    detail = f"{check.fraction_ok:.1%} of {check.checked} coords ok, worst rel. err {check.worst_error:.2e}"
    return CheckResult(name, check.passed, detail)


def _small_scene(size: int = 8):
    c = (size - 1) / 2
    cam = CameraConfig(kind="pinhole", fx=float(size), fy=float(size), cx=c, cy=c, width=size, height=size)
    spec = SceneSpec(camera=cam, planes=[PlaneSpec(offset=5.0)], texture_cell=0.8)
    return make_scene(spec)


def _small_problem(toggles: Toggles) -> RefineProblem:
    gt = _small_scene()
    return RefineProblem(
        target=gt.I_t,
        sources=gt.sources,
        seg_target=gt.M_t,
        seg_sources=gt.source_segmentations,
        camera=gt.camera,
        poses=gt.source_poses,
        init_distance=gt.D_t * 1.3,
        toggles=toggles,
        neighbour_init=[d * 1.2 for d in gt.source_distances],
    )


# -- individual oracles --------------------------------------------------------


def check_robust_values() -> CheckResult:
    one = torch.tensor(1.0, dtype=DTYPE)
    errors = [
        abs(float(robust_rho(one, 1.0, 1.0)) - (math.sqrt(2) - 1)),
        abs(float(robust_rho(one, -2.0, 1.0)) - 0.4),
        abs(float(robust_rho(one, 2.0, 1.0)) - 0.5),
        abs(float(robust_rho(one, 0.0, 1.0)) - math.log(1.5)),
    ]
    x = torch.linspace(-10.0, 10.0, 201, dtype=DTYPE)
    near_two = (robust_rho(x, 2.0 - 1e-6, 10.0) - 0.5 * (x / 10.0) ** 2).abs().max()
    near_zero = (robust_rho(x, 1e-6, 1.0) - torch.log1p(0.5 * x**2)).abs().max()
    worst = max(max(errors), float(near_two), float(near_zero))
    return CheckResult("robust loss special values", max(errors) < 1e-12 and worst < 1e-5, f"worst abs. err {worst:.2e}")


def check_robust_gradient(
    fd_tol: float = 1e-3, analytic: Optional[Callable[[Callable, torch.Tensor], torch.Tensor]] = None
) -> CheckResult:
    """FD check of d/dx sum(rho); ``analytic`` substitutes the gradient under test."""
    x = torch.linspace(-2.0, 2.0, 41, dtype=DTYPE) + 0.013

    def fn(v):
        return robust_rho(v, 1.5, 0.7).sum()

    return _gradient_result("robust loss gradient", check_gradient(fn, x, rtol=fd_tol, analytic=analytic))


def check_adaptive_gradient(fd_tol: float) -> CheckResult:
    x = torch.linspace(-1.0, 1.0, 21, dtype=DTYPE)

    def fn(alpha):
        return robust_nll(x, alpha, torch.tensor(0.5, dtype=DTYPE)).sum()

    alphas = torch.tensor([0.7, 1.3], dtype=DTYPE)
    return _gradient_result(
        "adaptive NLL gradient in alpha",
        check_gradient(lambda a: fn(a[0]) + fn(a[1]), alphas, rtol=fd_tol),
    )


def check_objective_gradient(fd_tol: float) -> CheckResult:
    problem = _small_problem(Toggles(csdcl=True))
    fn = distance_objective(problem, freeze_masks=True)
    check = check_gradient(fn, problem.init_distance, rtol=fd_tol, fraction=FD_FRACTION)
    return _gradient_result("full distance objective gradient", check)


def check_smoothness_gradient(fd_tol: float) -> CheckResult:
    gt = _small_scene()
    D = gt.D_t * (1.0 + 0.2 * torch.rand(gt.D_t.shape, generator=torch.Generator().manual_seed(3), dtype=DTYPE))
    return _gradient_result(
        "smoothness gradient",
        check_gradient(lambda d: smoothness_loss(d, gt.I_t), D, rtol=fd_tol, fraction=FD_FRACTION),
    )


def check_csdcl_gradient(fd_tol: float) -> CheckResult:
    gt = _small_scene()
    pose = gt.poses[1]
    D_next = gt.distances[1] * 1.1

    def fn(D):
        forward = project_distances(D, D_next, pose, gt.camera)
        return csdcl(forward, project_distances(D_next, D, pose.inverse(), gt.camera))

    return _gradient_result("CSDCL gradient", check_gradient(fn, gt.D_t * 0.9, rtol=fd_tol, fraction=FD_FRACTION))


def check_task_weighting(fd_tol: float) -> List[CheckResult]:
    value = float(mtl_weighted_loss(2.0, 4.0, TaskUncertainty.from_sigmas(1.0, 2.0)))
    exact = CheckResult("task weighting value", abs(value - 3.29176) < 1e-5, f"{value:.6f}")

    def fn(v):
        return mtl_weighted_loss(2.0, 4.0, TaskUncertainty(v[0], v[1]))

    grad = _gradient_result(
        "task weighting gradient", check_gradient(fn, torch.tensor([0.1, -0.3], dtype=DTYPE), rtol=fd_tol)
    )
    return [exact, grad]


def check_dynamic_mask_brute_force(trials: int = 100, size: int = 16, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    dc = (3, 4, 5)
    mismatches = 0
    for _ in range(trials):
        a = rng.integers(0, 6, (size, size))
        b = rng.integers(0, 6, (size, size))
        mu = dynamic_mask(torch.from_numpy(a), torch.from_numpy(b), dc).numpy()
        for i in range(size):
            for j in range(size):
                expected = a[i, j] not in dc and b[i, j] not in dc
                mismatches += int(bool(mu[i, j]) != expected)
    return CheckResult("dynamic mask vs brute force", mismatches == 0, f"{mismatches} mismatching pixels")


def _test_cameras() -> List[CameraModel]:
    return [
        CameraModel.pinhole(fx=40.0, fy=40.0, cx=31.5, cy=23.5, width=64, height=48),
        CameraModel.fisheye((30.0, 0.0, -1.5, 0.0), cx=31.5, cy=23.5, width=64, height=48),
    ]


def check_warp_identity() -> CheckResult:
    worst = math.inf
    for cam in _test_cameras():
        img = torch.rand(cam.height, cam.width, 3, generator=torch.Generator().manual_seed(1), dtype=DTYPE)
        D = torch.full((cam.height, cam.width), 5.0, dtype=DTYPE)
        rec, valid = synthesize_view(img, D, Pose.identity(), cam)
        interior = valid.clone()
        interior[[0, -1], :] = False
        interior[:, [0, -1]] = False
        worst = min(worst, psnr(rec, img, interior))
    return CheckResult("identity warp PSNR", worst > 40.0, f"min PSNR {worst:.1f} dB")


def check_projection_round_trip(n: int = 10_000, seed: int = 0) -> CheckResult:
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for cam in _test_cameras():
        uv = torch.rand(n, 2, generator=gen, dtype=DTYPE) * torch.tensor([cam.width - 1, cam.height - 1], dtype=DTYPE)
        if cam.is_fisheye:
            r = torch.hypot(uv[:, 0] - cam.cx, uv[:, 1] - cam.cy)
            uv = uv[r <= cam.max_radius]
        distance = 0.5 + 50.0 * torch.rand(uv.shape[0], generator=gen, dtype=DTYPE)
        back, ok = cam.project(cam.unproject(uv, distance))
        worst = max(worst, float((back - uv).abs().max()))
        if not bool(ok.all()):
            return CheckResult("projection round trip", False, "valid pixels reported invalid")
    return CheckResult("projection round trip", worst < 1e-6, f"max error {worst:.2e} px")


def check_layers() -> List[CheckResult]:
    p = AttentionParams.random(d_in=3, d_out=4, k=3, seed=7)
    x = torch.rand(5, 5, 3, generator=torch.Generator().manual_seed(2), dtype=DTYPE)
    block = neighborhoods(x, 3)
    perm = torch.randperm(9, generator=torch.Generator().manual_seed(5))
    q = x @ p.w_q.T

    def attend_all(b, rel):
        logits = torch.einsum("hwd,hwnd->hwn", q, b @ p.w_k.T)
        if rel:
            logits = logits + torch.einsum("hwd,nd->hwn", q, p.block_embeddings())
        return torch.einsum("hwn,hwnd->hwd", torch.softmax(logits, -1), b @ p.w_v.T)

    plain = (attend_all(block, False) - attend_all(block[:, :, perm], False)).abs().max()
    relative = (attend_all(block, True) - attend_all(block[:, :, perm], True)).abs().max()
    direct = (attend_all(block, True) - self_attention(x, p, use_rel=True)).abs().max()
    attn = CheckResult(
        "attention permutation symmetry",
        float(plain) < 1e-6 and float(relative) > 1e-6 and float(direct) < 1e-12,
        f"plain {float(plain):.1e}, relative {float(relative):.1e}",
    )

    pac = PACParams.random(d_in=2, d_out=3, k=3, sigma=0.7, seed=4)
    xs = torch.rand(8, 8, 2, generator=torch.Generator().manual_seed(6), dtype=DTYPE)
    guide = torch.full((8, 8, 4), 0.3, dtype=DTYPE)
    out = pixel_adaptive_conv(xs, guide, pac)
    err = float((out - _brute_force_conv(xs, pac)).abs().max())
    return [attn, CheckResult("PAC equals convolution under constant guidance", err < 1e-6, f"max error {err:.1e}")]


def _brute_force_conv(x: torch.Tensor, p: PACParams) -> torch.Tensor:
    """Cross-correlation with reflect padding, written as explicit loops."""
    k = p.k
    r = k // 2
    h, w, _ = x.shape
    xn = x.numpy()
    padded = np.pad(xn, ((r, r), (r, r), (0, 0)), mode="reflect")
    weight = p.weight.numpy()
    out = np.zeros((h, w, weight.shape[3]))
    for i in range(h):
        for j in range(w):
            for a in range(k):
                for b in range(k):
                    out[i, j] += padded[i + a, j + b] @ weight[a, b]
    return torch.from_numpy(out + p.bias.numpy())


def check_depth_metrics() -> CheckResult:
    gt = torch.ones(4, 4, dtype=DTYPE)
    m = depth_metrics(2 * gt, gt)
    got = (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.a1, m.a2, m.a3)
    expected = (1.0, 1.0, 1.0, math.log(2.0), 0.0, 0.0, 0.0)
    err = max(abs(a - b) for a, b in zip(got, expected))
    return CheckResult("depth metrics on 2x over-prediction", err < 1e-12, f"max error {err:.1e}")


# -- suite ---------------------------------------------------------------------


def run_checks(fd_tol: float = DEFAULT_FD_TOL) -> List[CheckResult]:
    results = [
        check_robust_values(),
        check_robust_gradient(fd_tol),
        check_adaptive_gradient(fd_tol),
        check_objective_gradient(fd_tol),
        check_smoothness_gradient(fd_tol),
        check_csdcl_gradient(fd_tol),
        *check_task_weighting(fd_tol),
        check_dynamic_mask_brute_force(),
        check_warp_identity(),
        check_projection_round_trip(),
        *check_layers(),
        check_depth_metrics(),
    ]
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} oracle checks failed: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} oracle checks passed")
    return results


def format_table(results: List[CheckResult]) -> str:
    frame = pd.DataFrame(
        [{"check": r.name, "status": "PASS" if r.passed else "FAIL", "detail": r.detail} for r in results]
    )
    return frame.to_string(index=False)
