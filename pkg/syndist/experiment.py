"""Experiment runner: scenes, refinement runs, ablation grids and artifacts.

An experiment expands into one run per (seed, toggle combination); ablated
toggles take both values, the others keep the configured one. Runs execute
in a joblib thread pool and each produces a metrics row, a report entry and
a figure. Output files are written atomically.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd
import torch
from joblib import Parallel, delayed

from syndist.config import get_settings
from syndist.core.masking import dynamic_mask
from syndist.core.optim import MAX_DISTANCE, MIN_DISTANCE, RefineProblem, refine_depth
from syndist.core.synth import GroundTruth, camera_velocity, depth_metrics, make_scene, miou
from syndist.core.warp import warp_segmentation
from syndist.errors import ConfigError, SyndistError
from syndist.io import atomic_write_text, refinement_panels, save_ground_truth, save_panels, save_pfm, write_json
from syndist.schemas import (
    BUILDING,
    NUM_CLASSES,
    TOGGLE_NAMES,
    VEHICLE,
    CameraConfig,
    ExperimentConfig,
    ObjectSpec,
    PlaneSpec,
    RobustParams,
    SceneSpec,
    Toggles,
)

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "run_id",
    "scene",
    "seed",
    *TOGGLE_NAMES,
    "iterations",
    "abs_rel",
    "sq_rel",
    "rmse",
    "rmse_log",
    "a1",
    "a2",
    "a3",
    "miou",
    "background_rmse",
    "object_rmse",
    "final_loss",
    "alpha",
]


# -- presets -------------------------------------------------------------------


def default_camera() -> CameraConfig:
    return CameraConfig(kind="pinhole", fx=64.0, fy=64.0, cx=63.5, cy=31.5, width=128, height=64)


def static_plane() -> ExperimentConfig:
    scene = SceneSpec(camera=default_camera(), planes=[PlaneSpec(offset=5.0)])
    return ExperimentConfig(name="static-plane", scene=scene)


def moving_object() -> ExperimentConfig:
    ego = (0.0, 0.0, 0.0, 0.5, 0.0, 0.0)
    car = ObjectSpec(
        class_id=VEHICLE,
        rect=(54, 20, 74, 44),
        depth=4.0,
        velocity=tuple(float(v) for v in camera_velocity(ego)),
    )
    scene = SceneSpec(
        camera=default_camera(),
        planes=[PlaneSpec(offset=8.0, class_id=BUILDING)],
        objects=[car],
        ego_twist=ego,
    )
    # the auto mask already drops a car moving at camera speed
    return ExperimentConfig(
        name="moving-object",
        scene=scene,
        toggles=Toggles(auto_mask=False),
        ablate=["dynamic_mask"],
        static_reference=True,
    )


def robust_vs_l1() -> ExperimentConfig:
    scene = SceneSpec(camera=default_camera(), planes=[PlaneSpec(offset=5.0)], outlier_fraction=0.1)
    return ExperimentConfig(
        name="robust-vs-l1",
        scene=scene,
        robust=RobustParams(alpha=1.0, adaptive=True),
        ablate=["robust_loss"],
    )


PRESETS: Dict[str, Callable[[], ExperimentConfig]] = {
    "static-plane": static_plane,
    "moving-object": moving_object,
    "robust-vs-l1": robust_vs_l1,
    "outlier-corrupted": robust_vs_l1,
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}") from None


def apply_overrides(
    cfg: ExperimentConfig,
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
    ablate: Optional[Sequence[str]] = None,
    out_dir: Optional[str] = None,
) -> ExperimentConfig:
    """Return a validated copy of ``cfg`` with command-line overrides applied."""
    data = cfg.dict()
    if iterations is not None:
        data["optimizer"]["iterations"] = iterations
    if seed is not None:
        data["seeds"] = [seed]
    if ablate is not None:
        data["ablate"] = list(ablate)
    if out_dir is not None:
        data["out_dir"] = out_dir
    try:
        return ExperimentConfig.parse_obj(data)
    except ValueError as e:
        raise ConfigError(str(e)) from e


# -- runs ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    scene: str
    seed: int
    toggles: Toggles
    static: bool = False


def expand_runs(cfg: ExperimentConfig) -> List[RunSpec]:
    """One run per seed and per on/off combination of the ablated toggles."""
    ablated = [t for t in TOGGLE_NAMES if t in set(cfg.ablate)]
    runs = []
    for seed in cfg.seeds:
        for values in itertools.product((True, False), repeat=len(ablated)):
            toggles = cfg.toggles.copy(update=dict(zip(ablated, values)))
            bits = "".join(str(int(getattr(toggles, t))) for t in TOGGLE_NAMES)
            runs.append(RunSpec(f"{cfg.name}-s{seed}-{bits}", cfg.name, seed, toggles))
        if cfg.static_reference:
            runs.append(RunSpec(f"{cfg.name}-s{seed}-static", f"{cfg.name}-static", seed, cfg.toggles, static=True))
    return runs


def scene_for(cfg: ExperimentConfig, seed: int, static: bool = False) -> SceneSpec:
    update = {"texture_seed": cfg.scene.texture_seed + seed}
    if static:
        update["objects"] = []
    return cfg.scene.copy(update=update)


def evaluation_regions(gt: GroundTruth, dc_classes: Sequence[int]):
    """Static background seen in every frame, and the dynamic-object region of frame t."""
    background = torch.ones_like(gt.M_t, dtype=torch.bool)
    for M_src, pose in zip(gt.source_segmentations, gt.source_poses):
        warped, _ = warp_segmentation(M_src, gt.D_t, pose, gt.camera)
        background &= dynamic_mask(gt.M_t, warped, dc_classes)
    objects = torch.isin(gt.M_t, torch.as_tensor(list(dc_classes)))
    return background, objects


def build_problem(cfg: ExperimentConfig, gt: GroundTruth, toggles: Toggles) -> RefineProblem:
    """Initialise at ``init_scale`` times the true distances, clamped into range."""
    lo, hi = MIN_DISTANCE * 1.01, MAX_DISTANCE * 0.99

    def init(D: torch.Tensor) -> torch.Tensor:
        return (D * cfg.init_scale).clamp(lo, hi)

    return RefineProblem(
        target=gt.I_t,
        sources=gt.sources,
        seg_target=gt.M_t,
        seg_sources=gt.source_segmentations,
        camera=gt.camera,
        poses=gt.source_poses,
        init_distance=init(gt.D_t),
        loss=cfg.loss,
        robust=cfg.robust,
        optimizer=cfg.optimizer,
        toggles=toggles,
        neighbour_init=[init(d) for d in gt.source_distances],
        ground_truth=gt.D_t,
    )


@dataclass
class RunOutcome:
    run: RunSpec
    row: Optional[dict] = None
    report: dict = field(default_factory=dict)
    error: Optional[str] = None


def _masked_rmse(pred, gt, region) -> float:
    if not bool(region.any()):
        return math.nan
    return depth_metrics(pred, gt, mask=region).rmse


def run_single(cfg: ExperimentConfig, run: RunSpec, out_dir: Optional[Path] = None) -> RunOutcome:
    """Render, refine and evaluate one run. Failures are captured, not raised."""
    try:
        reference = make_scene(scene_for(cfg, run.seed))
        gt = make_scene(scene_for(cfg, run.seed, static=True)) if run.static else reference
        background, objects = evaluation_regions(reference, cfg.loss.dc_classes)
        problem = build_problem(cfg, gt, run.toggles)
        report = refine_depth(problem)

        after = report.metrics_after
        warped, valid = warp_segmentation(gt.segmentations[1], report.distance, gt.poses[1], gt.camera)
        seg_consistency = miou(warped[valid], gt.M_t[valid], NUM_CLASSES) if bool(valid.any()) else math.nan
        row = {
            "run_id": run.run_id,
            "scene": run.scene,
            "seed": run.seed,
            **{t: int(getattr(run.toggles, t)) for t in TOGGLE_NAMES},
            "iterations": report.iterations,
            **after.as_dict(),
            "miou": seg_consistency,
            "background_rmse": _masked_rmse(report.distance, gt.D_t, background),
            "object_rmse": _masked_rmse(report.distance, gt.D_t, objects),
            "final_loss": report.final_loss,
            "alpha": report.alpha if report.alpha is not None else math.nan,
        }
        entry = {"run_id": run.run_id, "seed": run.seed, "toggles": run.toggles.dict(), **report.to_dict()}
        if out_dir is not None:
            run_dir = out_dir / "runs" / run.run_id
            save_pfm(run_dir / "refined.pfm", report.distance)
            save_ground_truth(gt, run_dir / "scene")
            save_panels(
                run_dir / "panels.png",
                refinement_panels(gt.I_t, gt.D_t, report.distance, report.mask),
                title=f"{run.run_id}  AbsRel {after.abs_rel:.4f}",
            )
        logger.info(f"Run {run.run_id}: AbsRel {after.abs_rel:.4f}, final loss {report.final_loss:.6g}")
        return RunOutcome(run, row, entry)
    except SyndistError as e:
        logger.error(f"Run {run.run_id} failed: {e}", exc_info=True)
        return RunOutcome(run, None, {"run_id": run.run_id, "error": str(e)}, error=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Run {run.run_id} crashed: {e}", exc_info=True)
        return RunOutcome(run, None, {"run_id": run.run_id, "error": str(e)}, error=f"{type(e).__name__}: {e}")


@dataclass
class ExperimentResult:
    metrics: pd.DataFrame
    reports: List[dict]
    out_dir: Optional[Path]
    failures: List[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(
    cfg: ExperimentConfig, out_dir: Optional[Path] = None, threads: Optional[int] = None
) -> ExperimentResult:
    """Run every expanded run and write metrics.csv, report.json and figures."""
    settings = get_settings()
    n_jobs = threads or settings.threads
    if out_dir is None and cfg.out_dir is not None:
        out_dir = Path(cfg.out_dir)
    runs = expand_runs(cfg)
    logger.info(f"Experiment {cfg.name}: {len(runs)} runs on {n_jobs} threads")

    outcomes = Parallel(n_jobs=max(1, min(n_jobs, len(runs))), prefer="threads")(
        delayed(run_single)(cfg, run, out_dir) for run in runs
    )
    rows = [o.row for o in outcomes if o.row is not None]
    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    failures = [f"{o.run.run_id}: {o.error}" for o in outcomes if o.error]
    reports = [o.report for o in outcomes]

    if out_dir is not None:
        atomic_write_text(out_dir / "metrics.csv", metrics.to_csv(index=False, float_format="%.6g"))
        write_json(
            out_dir / "report.json",
            {"config": cfg.dict(), "runs": reports, "failures": failures},
        )
        logger.info(f"Wrote {len(rows)} metric rows to {out_dir / 'metrics.csv'}")
    return ExperimentResult(metrics=metrics, reports=reports, out_dir=out_dir, failures=failures)
