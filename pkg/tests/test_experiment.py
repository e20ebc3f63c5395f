"""Tests for presets, ablation expansion and the experiment runner."""

import json
import math

import pandas as pd
import pytest
import torch

from syndist import experiment
from syndist.core.synth import GroundTruth, depth_metrics, make_scene
from syndist.errors import ConfigError
from syndist.experiment import (
    METRIC_COLUMNS,
    apply_overrides,
    build_problem,
    evaluation_regions,
    expand_runs,
    preset,
    run_experiment,
    run_single,
    scene_for,
)
from syndist.schemas import VEHICLE, PlaneSpec


def test_presets() -> None:
    assert preset("static-plane").name == "static-plane"
    assert preset("moving-object").ablate == ["dynamic_mask"]
    assert preset("outlier-corrupted") == preset("robust-vs-l1")
    with pytest.raises(ConfigError):
        preset("nope")


def test_apply_overrides() -> None:
    cfg = apply_overrides(preset("static-plane"), iterations=7, seed=3, ablate=["csdcl", "smoothness"])
    assert cfg.optimizer.iterations == 7
    assert cfg.seeds == [3]
    assert cfg.ablate == ["csdcl", "smoothness"]
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ablate=["warp_speed"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, iterations=-1)


def test_expand_runs() -> None:
    runs = expand_runs(preset("moving-object"))
    assert [r.run_id for r in runs] == [
        "moving-object-s0-11001",
        "moving-object-s0-10001",
        "moving-object-s0-static",
    ]
    assert [r.toggles.dynamic_mask for r in runs] == [True, False, True]
    assert not any(r.toggles.auto_mask for r in runs)

    cfg = preset("static-plane").copy(update={"seeds": [0, 1], "ablate": ["csdcl", "robust_loss"]})
    runs = expand_runs(cfg)
    assert len(runs) == 8
    assert len({r.run_id for r in runs}) == 8

    cfg = preset("moving-object").copy(update={"static_reference": False})
    runs = expand_runs(cfg)
    assert len(runs) == 2 and not any(r.static for r in runs)


def test_static_reference_scene_drops_objects() -> None:
    cfg = preset("moving-object")
    assert scene_for(cfg, 0, static=True).objects == []
    assert scene_for(cfg, 2).texture_seed == cfg.scene.texture_seed + 2


def test_evaluation_regions(moving_scene: GroundTruth) -> None:
    background, objects = evaluation_regions(moving_scene, [VEHICLE])
    car = moving_scene.M_t == VEHICLE
    assert torch.equal(objects, car)
    assert not bool((background & car).any())
    assert float(background.double().mean()) > 0.7


def test_initial_distances_are_clamped(plane_scene: GroundTruth) -> None:
    cfg = preset("static-plane").copy(update={"init_scale": 50.0})
    problem = build_problem(cfg, plane_scene, cfg.toggles)
    assert float(problem.init_distance.max()) == pytest.approx(99.0)


def test_zero_iterations_reports_initial_metrics(tmp_path) -> None:
    cfg = apply_overrides(preset("static-plane"), iterations=0)
    result = run_experiment(cfg, out_dir=tmp_path)
    assert result.ok
    assert list(result.metrics.columns) == METRIC_COLUMNS
    row = result.metrics.iloc[0]
    gt = make_scene(cfg.scene)
    expected = depth_metrics((gt.D_t * cfg.init_scale).clamp(0.101, 99.0), gt.D_t)
    assert row["iterations"] == 0
    assert row["abs_rel"] == pytest.approx(expected.abs_rel)
    assert row["rmse"] == pytest.approx(expected.rmse)

    run_dir = tmp_path / "runs" / row["run_id"]
    for name in ("refined.pfm", "panels.png", "scene/poses.json"):
        assert (run_dir / name).exists()
    csv = pd.read_csv(tmp_path / "metrics.csv")
    assert csv["run_id"].tolist() == [row["run_id"]]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["optimizer"]["iterations"] == 0
    assert report["runs"][0]["trace"] == []


def test_ablation_rows_carry_toggles(tmp_path) -> None:
    cfg = apply_overrides(preset("moving-object"), iterations=0)
    metrics = run_experiment(cfg, out_dir=tmp_path).metrics
    assert metrics["dynamic_mask"].tolist() == [1, 0, 1]
    assert metrics["scene"].tolist() == ["moving-object", "moving-object", "moving-object-static"]
    assert (metrics["seed"] == 0).all()
    on, off = metrics.iloc[0], metrics.iloc[1]
    assert on["background_rmse"] <= off["background_rmse"]
    assert not math.isnan(on["object_rmse"])


def test_robust_ablation_reports_alpha() -> None:
    cfg = apply_overrides(preset("robust-vs-l1"), iterations=2)
    metrics = run_experiment(cfg).metrics
    assert metrics["robust_loss"].tolist() == [1, 0]
    assert 0.0 < metrics["alpha"].iloc[0] < 2.0
    assert math.isnan(metrics["alpha"].iloc[1])


def test_runs_are_deterministic(tmp_path) -> None:
    cfg = apply_overrides(preset("static-plane"), iterations=3)
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_failed_runs_are_recorded(tmp_path) -> None:
    base = preset("static-plane")
    scene = base.scene.copy(update={"planes": [PlaneSpec(offset=-5.0)]})
    result = run_experiment(base.copy(update={"scene": scene}), out_dir=tmp_path)
    assert not result.ok
    assert "InvalidArgumentError" in result.failures[0]
    assert result.metrics.empty
    assert json.loads((tmp_path / "report.json").read_text())["failures"] == result.failures


def test_unexpected_errors_are_recorded(monkeypatch) -> None:
    def crash(problem):
        raise RuntimeError("solver crashed")

    monkeypatch.setattr(experiment, "refine_depth", crash)
    cfg = preset("static-plane")
    outcome = run_single(cfg, expand_runs(cfg)[0])
    assert outcome.row is None
    assert outcome.error == "RuntimeError: solver crashed"
    assert outcome.report == {"run_id": "static-plane-s0-11101", "error": "solver crashed"}


@pytest.mark.slow
def test_static_plane_preset_converges() -> None:
    cfg = preset("static-plane")
    gt = make_scene(cfg.scene)
    before = depth_metrics((gt.D_t * cfg.init_scale).clamp(0.101, 99.0), gt.D_t).abs_rel
    result = run_experiment(cfg)
    assert result.ok
    abs_rel = result.metrics["abs_rel"].iloc[0]
    assert abs_rel < before
    assert abs_rel < 0.05


@pytest.mark.slow
def test_dynamic_mask_brings_background_to_static_reference() -> None:
    result = run_experiment(preset("moving-object"))
    assert result.ok
    masked, unmasked, static = (result.metrics["background_rmse"].iloc[i] for i in range(3))
    assert result.metrics["scene"].iloc[2] == "moving-object-static"
    assert masked < unmasked
    assert masked <= static * 1.1


@pytest.mark.slow
def test_robust_loss_beats_l1_on_outliers() -> None:
    result = run_experiment(preset("robust-vs-l1"))
    assert result.ok
    robust, l1 = result.metrics.iloc[0], result.metrics.iloc[1]
    assert (robust["robust_loss"], l1["robust_loss"]) == (1, 0)
    assert robust["abs_rel"] < l1["abs_rel"]
