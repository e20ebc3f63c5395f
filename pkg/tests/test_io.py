"""Tests for artifact formats and config loading."""

import json

import numpy as np
import pytest
import torch

from syndist.core.layers import AttentionParams, self_attention
from syndist.core.synth import GroundTruth
from syndist.core.tensor import DTYPE
from syndist.errors import ConfigError, InvalidArgumentError
from syndist.io import (
    atomic_write_text,
    load_config,
    load_labels,
    load_param_blob,
    load_pfm,
    load_png,
    refinement_panels,
    save_ground_truth,
    save_labels,
    save_panels,
    save_param_blob,
    save_pfm,
    save_png,
)
from syndist.schemas import ExperimentConfig

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def test_pfm_round_trip(tmp_path) -> None:
    D = torch.arange(12, dtype=DTYPE).reshape(3, 4) * 0.5 + 0.25
    path = save_pfm(tmp_path / "d.pfm", D)
    assert path.read_bytes().startswith(b"Pf\n4 3\n-1.0\n")
    assert torch.equal(load_pfm(path), D)


def test_pfm_rejects_other_files(tmp_path) -> None:
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(InvalidArgumentError):
        load_pfm(tmp_path / "x.pfm")
    with pytest.raises(InvalidArgumentError):
        save_pfm(tmp_path / "y.pfm", torch.zeros(2, 2, 2))


def test_png_and_labels(tmp_path) -> None:
    gen = torch.Generator().manual_seed(0)
    img = torch.rand(5, 7, 3, generator=gen, dtype=DTYPE)
    back = load_png(save_png(tmp_path / "i.png", img))
    assert back.shape == (5, 7, 3)
    assert float((back - img).abs().max()) <= 0.5 / 255 + 1e-12

    labels = torch.randint(0, 6, (5, 7), generator=gen)
    assert torch.equal(load_labels(save_labels(tmp_path / "l.png", labels)), labels)
    with pytest.raises(InvalidArgumentError):
        save_labels(tmp_path / "bad.png", torch.full((2, 2), 300))


def test_param_blob_reproduces_attention(tmp_path) -> None:
    p = AttentionParams.random(d_in=3, d_out=4, k=3, seed=5)
    blob = {"w_q": p.w_q, "w_k": p.w_k, "w_v": p.w_v, "rel_rows": p.rel_rows, "rel_cols": p.rel_cols}
    loaded = load_param_blob(save_param_blob(tmp_path / "attn.bin", blob))
    assert loaded["rel_rows"].shape == (5, 2)
    q = AttentionParams.from_blob(loaded, k=3)
    x = torch.randn(6, 6, 3, generator=torch.Generator().manual_seed(6), dtype=DTYPE)
    assert torch.allclose(self_attention(x, q, use_rel=True), self_attention(x, p, use_rel=True), atol=1e-5)


def test_load_config_json_and_toml(tmp_path, camera_config) -> None:
    data = {"name": "json-run", "seeds": [1, 2], "scene": {"camera": camera_config.dict()}}
    (tmp_path / "cfg.json").write_text(json.dumps(data))
    cfg = load_config(tmp_path / "cfg.json", ExperimentConfig)
    assert cfg.name == "json-run" and cfg.seeds == [1, 2]
    assert cfg.optimizer.iterations == 500

    (tmp_path / "cfg.toml").write_text(
        """
name = "toml-run"
ablate = ["csdcl"]

[scene.camera]
kind = "pinhole"
fx = 32.0
fy = 32.0
cx = 31.5
cy = 15.5
width = 64
height = 32

[[scene.planes]]
offset = 6.0
"""
    )
    cfg = load_config(tmp_path / "cfg.toml", ExperimentConfig)
    assert cfg.ablate == ["csdcl"]
    assert cfg.scene.planes[0].offset == 6.0


@pytest.mark.parametrize(
    "name,content",
    [
        ("cfg.yaml", "name: x"),
        ("cfg.json", "{not json"),
        ("cfg.json", json.dumps({"name": "x"})),
        ("cfg.json", json.dumps({"scene": {"camera": {"kind": "pinhole", "cx": 1, "cy": 1, "width": 4, "height": 4}}})),
    ],
)
def test_load_config_errors(tmp_path, name: str, content: str) -> None:
    (tmp_path / name).write_text(content)
    with pytest.raises(ConfigError):
        load_config(tmp_path / name, ExperimentConfig)


def test_load_config_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json", ExperimentConfig)


def test_atomic_write_leaves_no_temporaries(tmp_path) -> None:
    path = atomic_write_text(tmp_path / "sub" / "out.txt", "first")
    atomic_write_text(path, "second")
    assert path.read_text() == "second"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_ground_truth_bundle(tmp_path, plane_scene: GroundTruth) -> None:
    out = save_ground_truth(plane_scene, tmp_path / "scene")
    assert torch.equal(load_labels(out / "labels_+0.png"), plane_scene.M_t)
    assert torch.allclose(load_pfm(out / "distance_-1.pfm"), plane_scene.distances[-1], rtol=1e-6)
    poses = json.loads((out / "poses.json").read_text())
    assert set(poses["poses"]) == {"+1", "-1"}


def test_refinement_panels_png(tmp_path, plane_scene: GroundTruth) -> None:
    mu = torch.ones_like(plane_scene.M_t, dtype=torch.bool)
    panels = refinement_panels(plane_scene.I_t, plane_scene.D_t, plane_scene.D_t * 1.1, mu)
    assert list(panels) == ["input", "ground truth", "refined", "abs. error", "dynamic mask"]
    assert all(np.asarray(p).shape == (64, 128, 3) for p in panels.values())
    path = save_panels(tmp_path / "panels.png", panels, title="plane")
    assert path.read_bytes().startswith(PNG_SIGNATURE)
