"""Direct refinement of distance maps (and poses) through the full objective.

The distance map is parameterised by an unconstrained pre-sigmoid tensor so
that every iterate stays inside the [0.1, 100] clamp range. Refinement is
plain gradient descent with Armijo backtracking. Validity and auto masks are
evaluated once at the start of each iteration and held fixed for its
gradient and line search. Fresh masks that would raise the loss above the
last accepted value are skipped for that iteration, so the recorded loss
trace never increases.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, List, Optional, Sequence, Tuple

import torch

from syndist.core.geometry import CameraModel, Pose, se3_exp
from syndist.core.losses import (
    auto_mask,
    clip_photometric,
    csdcl,
    masked_mean,
    min_over_valid,
    min_reprojection,
    photometric_loss,
    smoothness_loss,
    total_distance_loss,
)
from syndist.core.masking import (
    MotionVerdict,
    apply_mask_policy,
    dynamic_mask,
    masked_reconstruction_loss,
    motion_score,
)
from syndist.core.robust import alpha_from_raw, raw_from_alpha
from syndist.core.synth import DepthMetrics, depth_metrics
from syndist.core.tensor import DTYPE, ArrayLike, DistanceMap, Image, SegMask, as_float, as_image, as_labels
from syndist.core.warp import WarpedDistancePair, project_distances, synthesize_view, warp_segmentation
from syndist.errors import (
    DegenerateInputError,
    DivergenceError,
    InvalidArgumentError,
    OutOfRangeError,
)
from syndist.schemas import LossConfig, OptimizerConfig, RobustParams, Toggles

logger = logging.getLogger(__name__)

MIN_DISTANCE = 0.1
MAX_DISTANCE = 100.0
POSE_GRAD_TOL = 1e-6
_TINY_GRAD = 1e-30

# (a, b) so that both mappings cover [MIN_DISTANCE, MAX_DISTANCE].
DISTANCE_COEFFICIENTS = (MAX_DISTANCE - MIN_DISTANCE, MIN_DISTANCE)
DEPTH_COEFFICIENTS = (1.0 / MIN_DISTANCE - 1.0 / MAX_DISTANCE, 1.0 / MAX_DISTANCE)


def default_coefficients(kind: str) -> Tuple[float, float]:
    if kind == "distance":
        return DISTANCE_COEFFICIENTS
    if kind == "depth":
        return DEPTH_COEFFICIENTS
    raise InvalidArgumentError(f"kind must be 'distance' or 'depth', got {kind!r}")


def mapping_kind(cam: CameraModel) -> str:
    """Fisheye cameras estimate radial distance, pinhole cameras z-depth."""
    return "distance" if cam.is_fisheye else "depth"


def sigmoid_to_distance(s: ArrayLike, a: float, b: float, kind: str = "distance") -> DistanceMap:
    """distance kind: D = a*s + b; depth kind: D = 1 / (a*s + b)."""
    s = as_float(s)
    if kind == "distance":
        D = a * s + b
    elif kind == "depth":
        D = 1.0 / (a * s + b)
    else:
        raise InvalidArgumentError(f"kind must be 'distance' or 'depth', got {kind!r}")
    d = D.detach()
    if not bool((torch.isfinite(d) & (d > 0)).all()):
        raise OutOfRangeError("sigmoid mapping produced distances outside (0, inf)")
    return D


def distance_to_sigmoid(D: ArrayLike, a: float, b: float, kind: str = "distance") -> torch.Tensor:
    D = as_float(D)
    s = (D - b) / a if kind == "distance" else (1.0 / D - b) / a
    if not bool(((s > 0) & (s < 1)).all()):
        raise OutOfRangeError(f"distances must lie strictly inside ({MIN_DISTANCE}, {MAX_DISTANCE})")
    return s


def logit(s: torch.Tensor) -> torch.Tensor:
    return torch.log(s) - torch.log1p(-s)


@dataclass
class RefineProblem:
    """A target frame, its temporal neighbours and the settings to refine with.

    ``sources`` and ``poses`` are parallel: ``poses[i]`` is T_{t->t'} for the
    frame ``sources[i]``, typically t' in {t-1, t+1}.
    """

    target: Image
    sources: Sequence[Image]
    seg_target: SegMask
    seg_sources: Sequence[SegMask]
    camera: CameraModel
    poses: Sequence[Pose]
    init_distance: DistanceMap
    loss: LossConfig = field(default_factory=LossConfig)
    robust: RobustParams = field(default_factory=RobustParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    toggles: Toggles = field(default_factory=Toggles)
    neighbour_init: Optional[Sequence[DistanceMap]] = None
    mask_decisions: Optional[Sequence[bool]] = None
    ground_truth: Optional[DistanceMap] = None

    def __post_init__(self) -> None:
        self.target = as_image(self.target)
        self.sources = [as_image(s) for s in self.sources]
        self.seg_target = as_labels(self.seg_target)
        self.seg_sources = [as_labels(m) for m in self.seg_sources]
        self.init_distance = as_float(self.init_distance).detach()
        n = len(self.sources)
        if n == 0:
            raise InvalidArgumentError("need at least one source frame")
        if len(self.poses) != n or len(self.seg_sources) != n:
            raise InvalidArgumentError("sources, poses and segmentations must be parallel")
        shape = (self.camera.height, self.camera.width)
        for img in [self.target, *self.sources]:
            if img.shape[:2] != shape:
                raise InvalidArgumentError("all frames must share the camera resolution")
        for m in [self.seg_target, *self.seg_sources]:
            if m.shape != shape:
                raise InvalidArgumentError("segmentation masks must share the camera resolution")
        if self.init_distance.shape != shape:
            raise InvalidArgumentError("initial distance map must match the camera resolution")
        kind = mapping_kind(self.camera)
        distance_to_sigmoid(self.init_distance, *default_coefficients(kind), kind)
        if self.neighbour_init is not None:
            if len(self.neighbour_init) != n:
                raise InvalidArgumentError("one neighbour distance map per source is required")
            self.neighbour_init = [as_float(d).detach() for d in self.neighbour_init]
        if self.mask_decisions is not None and len(self.mask_decisions) != n:
            raise InvalidArgumentError("one mask decision per source is required")

    @property
    def kind(self) -> str:
        return mapping_kind(self.camera)


@dataclass
class LossTerms:
    total: torch.Tensor
    reconstruction: torch.Tensor
    smoothness: torch.Tensor
    consistency: torch.Tensor


@dataclass
class RefineReport:
    """Outcome of one refinement.

    ``trace[k]`` is the accepted loss of iteration k and ``start_losses[k]``
    the loss at the start of that iteration, both under the masks used for
    it. ``start_losses[k] <= trace[k-1]`` and ``trace[k] <= start_losses[k]``.
    """

    distance: DistanceMap
    initial_distance: DistanceMap
    trace: List[float]
    initial_loss: float
    final_loss: float
    iterations: int
    stalled: bool
    verdicts: List[MotionVerdict]
    mask_applied: List[bool]
    mask: torch.Tensor
    alpha: Optional[float] = None
    poses: Optional[List[Pose]] = None
    neighbours: Optional[List[DistanceMap]] = None
    metrics_before: Optional[DepthMetrics] = None
    metrics_after: Optional[DepthMetrics] = None
    start_losses: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trace": self.trace,
            "start_losses": self.start_losses,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "iterations": self.iterations,
            "stalled": self.stalled,
            "verdicts": [{"score": v.score, "moving": v.moving} for v in self.verdicts],
            "mask_applied": self.mask_applied,
            "masked_fraction": float(1.0 - self.mask.to(DTYPE).mean()),
            "alpha": self.alpha,
            "poses": [p.to_dict() for p in self.poses] if self.poses else None,
            "metrics_before": self.metrics_before.as_dict() if self.metrics_before else None,
            "metrics_after": self.metrics_after.as_dict() if self.metrics_after else None,
        }


@dataclass(frozen=True)
class _FrozenMasks:
    """Pixel sets held fixed for the duration of one iteration."""

    valids: List[torch.Tensor]
    auto: torch.Tensor
    pair_valids: List[Tuple[torch.Tensor, torch.Tensor]] = field(default_factory=list)


class _Objective:
    """Full distance objective L_r + beta*L_s + gamma*L_dc for one problem.

    Sampling uses edge clamping and the pixel sets come from ``masks``, so
    for fixed masks the objective is continuous in every variable.
    """

    def __init__(self, problem: RefineProblem, mu: torch.Tensor):
        self.p = problem
        self.mu = mu
        self.a, self.b = default_coefficients(problem.kind)

    def distance(self, x: torch.Tensor) -> DistanceMap:
        return sigmoid_to_distance(torch.sigmoid(x), self.a, self.b, self.p.kind)

    def _min_map(
        self,
        D: DistanceMap,
        poses: Sequence[Pose],
        alpha: Optional[torch.Tensor],
        valids: Optional[Sequence[torch.Tensor]] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor, List[torch.Tensor]]:
        p = self.p
        maps, used = [], []
        for i, (src, pose) in enumerate(zip(p.sources, poses)):
            I_hat, valid = synthesize_view(src, D, pose, p.camera, padding="border")
            if valids is not None:
                valid = valids[i]
            maps.append(
                photometric_loss(p.target, I_hat, p.loss, p.robust, valid, robust=p.toggles.robust_loss, alpha=alpha)
            )
            used.append(valid)
        min_map, any_valid = min_over_valid(maps, used)
        if p.loss.clip_quantile is not None:
            min_map = clip_photometric(min_map, any_valid, p.loss.clip_quantile)
        return min_map, any_valid, used

    def _pairs(
        self, D: DistanceMap, poses: Sequence[Pose], neighbours: Sequence[DistanceMap]
    ) -> List[Tuple[WarpedDistancePair, WarpedDistancePair]]:
        cam = self.p.camera
        return [
            (
                project_distances(D, D_n, pose, cam, padding="border"),
                project_distances(D_n, D, pose.inverse(), cam, padding="border"),
            )
            for pose, D_n in zip(poses, neighbours)
        ]

    def masks(
        self,
        D: DistanceMap,
        poses: Sequence[Pose],
        alpha: Optional[torch.Tensor] = None,
        neighbours: Optional[Sequence[DistanceMap]] = None,
    ) -> _FrozenMasks:
        """Validity, auto mask and distance-pair validity at the given estimate."""
        p, toggles = self.p, self.p.toggles
        with torch.no_grad():
            D = D.detach()
            poses = [q.detach() for q in poses]
            alpha = None if alpha is None else alpha.detach()
            min_map, any_valid, valids = self._min_map(D, poses, alpha)
            if toggles.auto_mask:
                unwarped = min_reprojection(
                    [
                        photometric_loss(p.target, src, p.loss, p.robust, robust=toggles.robust_loss, alpha=alpha)
                        for src in p.sources
                    ]
                )
                auto = auto_mask(min_map, unwarped)
            else:
                auto = torch.ones_like(any_valid)
            pair_valids = []
            if toggles.csdcl and neighbours:
                pairs = self._pairs(D, poses, [d.detach() for d in neighbours])
                pair_valids = [(fwd.valid, bwd.valid) for fwd, bwd in pairs]
        return _FrozenMasks(valids, auto, pair_valids)

    def terms(
        self,
        D: DistanceMap,
        poses: Sequence[Pose],
        masks: _FrozenMasks,
        alpha: Optional[torch.Tensor] = None,
        neighbours: Optional[Sequence[DistanceMap]] = None,
    ) -> LossTerms:
        p, cfg, toggles = self.p, self.p.loss, self.p.toggles
        min_map, any_valid, _ = self._min_map(D, poses, alpha, masks.valids)
        rec = masked_reconstruction_loss(min_map, self.mu, masks.auto, any_valid)
        zero = torch.zeros((), dtype=DTYPE)
        smooth = smoothness_loss(D, p.target) if toggles.smoothness else zero
        cons = zero
        if toggles.csdcl and neighbours:
            per_source = []
            for (fwd, bwd), (fwd_valid, bwd_valid) in zip(self._pairs(D, poses, neighbours), masks.pair_valids):
                per_source.append(csdcl(replace(fwd, valid=fwd_valid), replace(bwd, valid=bwd_valid)))
            cons = torch.stack(per_source).mean()
            if toggles.smoothness:
                smooth = smooth + sum(smoothness_loss(D_n, src) for D_n, src in zip(neighbours, p.sources))
        total = total_distance_loss(rec, smooth, cons, cfg)
        return LossTerms(total, rec, smooth, cons)


def _dynamic_masks(problem: RefineProblem) -> Tuple[torch.Tensor, List[MotionVerdict], List[bool]]:
    """mu_t from the initial distances, gated per source by the epsilon policy."""
    cfg = problem.loss
    verdicts = []
    mus = []
    for M_src, pose in zip(problem.seg_sources, problem.poses):
        warped, valid = warp_segmentation(M_src, problem.init_distance, pose, problem.camera)
        verdicts.append(motion_score(problem.seg_target, warped, cfg.dc_classes, cfg.motion_threshold, valid))
        mus.append(dynamic_mask(problem.seg_target, warped, cfg.dc_classes))
    if problem.mask_decisions is not None:
        decisions = [bool(d) for d in problem.mask_decisions]
    else:
        decisions = apply_mask_policy(verdicts, cfg.epsilon)
    mu = torch.ones_like(problem.seg_target, dtype=torch.bool)
    if problem.toggles.dynamic_mask:
        for m, apply in zip(mus, decisions):
            if apply:
                mu = mu & m
    else:
        decisions = [False] * len(decisions)
    return mu, verdicts, decisions


def distance_objective(problem: RefineProblem, freeze_masks: bool = True) -> Callable[[torch.Tensor], torch.Tensor]:
    """The full objective as a function of the target distance map alone.

    With ``freeze_masks`` the validity and auto masks are taken at the
    initial distances, which makes the functional smooth enough for
    finite-difference checks; otherwise they are recomputed at every call.
    """
    mu, _, _ = _dynamic_masks(problem)
    objective = _Objective(problem, mu)
    poses = list(problem.poses)
    neighbours = problem.neighbour_init
    frozen = objective.masks(problem.init_distance, poses, neighbours=neighbours) if freeze_masks else None

    def fn(D: torch.Tensor) -> torch.Tensor:
        masks = frozen if frozen is not None else objective.masks(D, poses, neighbours=neighbours)
        return objective.terms(D, poses, masks, neighbours=neighbours).total

    return fn


@dataclass
class _DescentResult:
    x: List[torch.Tensor]
    initial: float
    trace: List[float] = field(default_factory=list)
    starts: List[float] = field(default_factory=list)
    stalled: bool = False
    grad_norm: float = math.inf


class _Descent:
    """Gradient descent with Armijo backtracking over a list of tensors.

    ``refresh`` is called once at the start of every iteration and its result
    is passed to ``f`` unchanged for the gradient and for every line-search
    candidate of that iteration. A refreshed state that would raise the loss
    above the last accepted value is dropped for the previous one, so the
    recorded trace never increases.
    """

    def __init__(self, cfg: OptimizerConfig, name: str):
        self.cfg = cfg
        self.name = name
        self.step = cfg.step_size

    def run(
        self,
        f: Callable[[List[torch.Tensor], Any], torch.Tensor],
        variables: List[torch.Tensor],
        iterations: int,
        refresh: Optional[Callable[[List[torch.Tensor]], Any]] = None,
        grad_tol: float = 0.0,
    ) -> _DescentResult:
        x = [v.detach().clone() for v in variables]
        state = refresh(x) if refresh is not None else None
        with torch.no_grad():
            current = float(f(x, state))
        if not math.isfinite(current):
            raise DivergenceError(f"{self.name}: initial loss is not finite", iteration=0)
        result = _DescentResult(x=x, initial=current)
        for it in range(iterations):
            if it > 0 and refresh is not None:
                fresh = refresh(x)
                with torch.no_grad():
                    refreshed = float(f(x, fresh))
                if refreshed <= current:
                    state = fresh
                else:
                    logger.debug(
                        "%s: keeping previous masks at iteration %d (%.8g > %.8g)", self.name, it, refreshed, current
                    )
            leaves = [v.detach().requires_grad_(True) for v in x]
            loss = f(leaves, state)
            current = float(loss)
            if not math.isfinite(current):
                raise DivergenceError(f"{self.name}: loss is not finite", iteration=it, last_loss=result.initial)
            grads = torch.autograd.grad(loss, leaves, allow_unused=True)
            grads = [torch.zeros_like(v) if g is None else g for v, g in zip(leaves, grads)]
            g2 = float(sum((g * g).sum() for g in grads))
            if not math.isfinite(g2):
                raise DivergenceError(f"{self.name}: gradient is not finite", iteration=it, last_loss=current)
            result.grad_norm = math.sqrt(g2)
            if result.grad_norm < max(grad_tol, _TINY_GRAD):
                logger.debug("%s converged at iteration %d (|g|=%.3g)", self.name, it, result.grad_norm)
                break
            accepted = None
            for _ in range(self.cfg.max_backtracks):
                candidate = [v - self.step * g for v, g in zip(x, grads)]
                try:
                    with torch.no_grad():
                        value = float(f(candidate, state))
                except (DegenerateInputError, InvalidArgumentError):
                    value = math.inf
                if math.isnan(value):
                    raise DivergenceError(f"{self.name}: loss became NaN", iteration=it, last_loss=current)
                if value <= current - self.cfg.armijo * self.step * g2:
                    accepted = (candidate, value)
                    break
                self.step *= self.cfg.shrink
                logger.debug("%s: backtracking, step=%.3g", self.name, self.step)
            if accepted is None:
                logger.warning(f"{self.name}: line search stalled at iteration {it}, loss {current:.6g}")
                result.stalled = True
                self.step = self.cfg.step_size
                break
            x, value = accepted
            result.x = x
            result.starts.append(current)
            result.trace.append(value)
            current = value
            logger.debug("%s iteration %d: loss=%.8g step=%.3g", self.name, it, value, self.step)
            self.step *= self.cfg.grow
        return result


def refine_depth(problem: RefineProblem) -> RefineReport:
    """Refine the target distance map by minimising the full objective.

    Poses are held at ``problem.poses`` unless ``optimizer.optimize_pose`` is
    set, in which case their twists are optimised jointly. Validity and auto
    masks are recomputed at the start of every iteration; the dynamic mask
    is fixed for the whole run.
    """
    p = problem
    mu, verdicts, decisions = _dynamic_masks(p)
    objective = _Objective(p, mu)
    a, b = objective.a, objective.b

    variables: List[torch.Tensor] = [logit(distance_to_sigmoid(p.init_distance, a, b, p.kind))]
    n_src = len(p.sources)
    use_neighbours = p.toggles.csdcl
    if use_neighbours:
        neighbour_init = p.neighbour_init or [p.init_distance] * n_src
        variables += [logit(distance_to_sigmoid(d, a, b, p.kind)) for d in neighbour_init]
    adaptive = p.toggles.robust_loss and p.robust.adaptive
    if adaptive:
        variables.append(raw_from_alpha(p.robust.alpha))
    if p.optimizer.optimize_pose:
        variables += [pose.twist.detach().clone() for pose in p.poses]

    def unpack(v: List[torch.Tensor]):
        i = 1
        neighbours = None
        if use_neighbours:
            neighbours = [objective.distance(x) for x in v[i : i + n_src]]
            i += n_src
        alpha = None
        if adaptive:
            alpha = alpha_from_raw(v[i])
            i += 1
        poses = [se3_exp(t) for t in v[i : i + n_src]] if p.optimizer.optimize_pose else list(p.poses)
        return objective.distance(v[0]), neighbours, alpha, poses

    def refresh(v: List[torch.Tensor]) -> _FrozenMasks:
        with torch.no_grad():
            D, neighbours, alpha, poses = unpack(v)
        return objective.masks(D, poses, alpha, neighbours)

    def f(v: List[torch.Tensor], masks: _FrozenMasks) -> torch.Tensor:
        D, neighbours, alpha, poses = unpack(v)
        return objective.terms(D, poses, masks, alpha=alpha, neighbours=neighbours).total

    logger.info(
        f"Refining {p.camera.kind} {p.camera.width}x{p.camera.height} distances for "
        f"{p.optimizer.iterations} iterations ({p.toggles.label()})"
    )
    run = _Descent(p.optimizer, "refine_depth").run(f, variables, p.optimizer.iterations, refresh=refresh)

    with torch.no_grad():
        D, neighbours, alpha, poses = unpack(run.x)
    if not run.trace:
        # no accepted step: hand back the input exactly, not its sigmoid round trip
        D = p.init_distance
    final = run.trace[-1] if run.trace else run.initial
    report = RefineReport(
        distance=D.detach(),
        initial_distance=p.init_distance,
        trace=run.trace,
        initial_loss=run.initial,
        final_loss=final,
        iterations=len(run.trace),
        stalled=run.stalled,
        verdicts=verdicts,
        mask_applied=decisions,
        mask=mu,
        alpha=float(alpha) if alpha is not None else (p.robust.alpha if p.toggles.robust_loss else None),
        poses=[q.detach() for q in poses] if p.optimizer.optimize_pose else None,
        neighbours=[d.detach() for d in neighbours] if neighbours else None,
        start_losses=run.starts,
    )
    if p.ground_truth is not None:
        report.metrics_before = depth_metrics(p.init_distance, p.ground_truth)
        report.metrics_after = depth_metrics(report.distance, p.ground_truth)
    logger.info(f"Refinement done: loss {run.initial:.6g} -> {final:.6g} in {len(run.trace)} iterations")
    return report


@dataclass
class PoseReport:
    poses: List[Pose]
    trace: List[float]
    initial_loss: float
    final_loss: float
    grad_norm: float
    stalled: bool


def photometric_objective(problem: RefineProblem, D: DistanceMap, poses: Sequence[Pose]) -> torch.Tensor:
    """Masked mean of the per-pixel minimum photometric loss (no auto mask)."""
    mu, _, _ = _dynamic_masks(problem)
    return _photometric(problem, mu, D, poses)


def _photometric(
    problem: RefineProblem,
    mu: torch.Tensor,
    D: DistanceMap,
    poses: Sequence[Pose],
    valids: Optional[Sequence[torch.Tensor]] = None,
) -> torch.Tensor:
    maps, used = [], []
    for i, (src, pose) in enumerate(zip(problem.sources, poses)):
        I_hat, valid = synthesize_view(src, D, pose, problem.camera, padding="border")
        if valids is not None:
            valid = valids[i]
        maps.append(
            photometric_loss(
                problem.target, I_hat, problem.loss, problem.robust, valid, robust=problem.toggles.robust_loss
            )
        )
        used.append(valid)
    min_map, any_valid = min_over_valid(maps, used)
    return masked_mean(min_map, mu & any_valid)


def pose_refine(
    problem: RefineProblem,
    init_twists: Sequence[ArrayLike],
    components: str = "full",
    iterations: Optional[int] = None,
) -> PoseReport:
    """Optimise the source twists with the distances held at ``init_distance``.

    ``components="translation"`` keeps each rotation at its initial value and
    moves only the translation coordinates. Stops once the gradient norm
    drops below 1e-6.
    """
    if components not in ("full", "translation"):
        raise InvalidArgumentError("components must be 'full' or 'translation'")
    if len(init_twists) != len(problem.sources):
        raise InvalidArgumentError("one initial twist per source is required")
    twists = [as_float(t).detach().clone() for t in init_twists]
    for t in twists:
        se3_exp(t)
    mu, _, _ = _dynamic_masks(problem)
    D = problem.init_distance

    if components == "full":
        variables = twists

        def to_twists(v):
            return v
    else:
        variables = [t[3:].clone() for t in twists]

        def to_twists(v):
            return [torch.cat((t[:3], rho)) for t, rho in zip(twists, v)]

    def refresh(v: List[torch.Tensor]) -> List[torch.Tensor]:
        with torch.no_grad():
            poses = [se3_exp(t) for t in to_twists(v)]
            return [synthesize_view(src, D, q, problem.camera)[1] for src, q in zip(problem.sources, poses)]

    def f(v: List[torch.Tensor], valids: List[torch.Tensor]) -> torch.Tensor:
        return _photometric(problem, mu, D, [se3_exp(t) for t in to_twists(v)], valids)

    n_iter = problem.optimizer.iterations if iterations is None else iterations
    run = _Descent(problem.optimizer, "pose_refine").run(f, variables, n_iter, refresh=refresh, grad_tol=POSE_GRAD_TOL)
    poses = [se3_exp(t.detach()) for t in to_twists(run.x)]
    return PoseReport(
        poses=poses,
        trace=run.trace,
        initial_loss=run.initial,
        final_loss=run.trace[-1] if run.trace else run.initial,
        grad_norm=run.grad_norm,
        stalled=run.stalled,
    )
