"""End-to-end command-line workflows."""

import json
import os

import numpy as np
import pytest

from uvsplat.cli import main
from uvsplat.meshio import load_png


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated scene plus a finished (short) training run."""
    root = tmp_path_factory.mktemp("cli")
    scene_dir = root / "scene"
    out_dir = root / "run"
    assert main(["gen-scene", "--preset", "static", "--seed", "0",
                 "--out", str(scene_dir), "--size", "16", "--frames", "10"]) == 0
    cfg = {
        "scene": str(scene_dir),
        "out_dir": str(out_dir),
        "uv_size": 16,
        "image_width": 16,
        "image_height": 16,
        "train": {
            "stage1_iters": 40, "stage2_iters": 20,
            "lr_stage1": 5e-3, "lr_stage2": 1e-3,
            "densify_interval": 20, "seed": 0,
        },
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path), "--stage", "all"]) == 0
    return root, scene_dir, out_dir, cfg_path


def test_gen_scene_bad_preset(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["gen-scene", "--preset", "bogus", "--out", str(tmp_path / "x")])


def test_train_missing_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 1


def test_train_artifacts(workspace):
    root, scene_dir, out_dir, cfg_path = workspace
    for name in ("stage1.ckpt", "stage2.ckpt", "config.json",
                 "metrics_stage1.csv", "metrics_stage2.csv",
                 "summary_stage1.json", "summary_stage2.json"):
        assert (out_dir / name).exists(), name


def test_render_and_base_only(workspace, tmp_path):
    root, scene_dir, out_dir, cfg_path = workspace
    png = tmp_path / "f.png"
    assert main(["render", "--ckpt", str(out_dir / "stage2.ckpt"),
                 "--frame", "0", "--out", str(png)]) == 0
    img = load_png(png)
    assert img.shape == (16, 16, 3)
    png_b = tmp_path / "b.png"
    assert main(["render", "--ckpt", str(out_dir / "stage2.ckpt"),
                 "--frame", "0", "--base-only", "--out", str(png_b)]) == 0
    assert main(["render", "--ckpt", str(out_dir / "stage2.ckpt"),
                 "--frame", "99", "--out", str(png)]) == 1  # out of range


def test_render_stage1_ckpt_uses_base_path(workspace, tmp_path):
    root, scene_dir, out_dir, cfg_path = workspace
    png = tmp_path / "s1.png"
    assert main(["render", "--ckpt", str(out_dir / "stage1.ckpt"),
                 "--frame", "0", "--out", str(png)]) == 0


def test_eval_prints_metrics(workspace, tmp_path, capsys):
    root, scene_dir, out_dir, cfg_path = workspace
    json_out = tmp_path / "m.json"
    assert main(["eval", "--ckpt", str(out_dir / "stage2.ckpt"),
                 "--config", str(out_dir / "config.json"),
                 "--json", str(json_out)]) == 0
    out = capsys.readouterr().out
    assert "psnr" in out and "test" in out
    data = json.loads(json_out.read_text())
    assert set(data) == {"train", "test"}
    assert np.isfinite(data["test"]["psnr"])


def test_eval_untrained_worse_than_trained(workspace, tmp_path):
    """An untrained state scores strictly below the trained one."""
    root, scene_dir, out_dir, cfg_path = workspace
    from uvsplat.config import load_config
    from uvsplat.scene import load_bundle
    from uvsplat.training import (
        AvatarState, evaluate, load_state, make_base_model, precompute_frames,
    )
    from uvsplat.geometry import init_cloud

    cfg = load_config(out_dir / "config.json")
    scene = load_bundle(cfg.scene)
    fd, _ = precompute_frames(scene, cfg.uv_size)
    trained, _ = load_state(out_dir / "stage1.ckpt", cfg, fd[0].cond.dim)
    fresh = AvatarState(cloud=init_cloud(scene.rig.rest),
                        base_model=make_base_model(cfg, seed=0))
    m_trained = evaluate(trained, scene, fd, scene.test_idx, stage=1)
    m_fresh = evaluate(fresh, scene, fd, scene.test_idx, stage=1)
    assert np.isfinite(m_fresh["psnr"])
    assert m_trained["psnr"] > m_fresh["psnr"]


def test_grad_check_cli(capsys):
    assert main(["grad-check", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "rasterizer" in out and "FAIL" not in out


def test_bench_cli(capsys):
    assert main(["bench", "--size", "32x32", "--gaussians", "50"]) == 0
    out = capsys.readouterr().out
    assert "px/s" in out


def test_bench_bad_size():
    assert main(["bench", "--size", "banana"]) == 1
