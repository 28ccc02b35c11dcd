"""Command-line entry points.

Subcommands: gen-scene, train, render, eval, grad-check, bench. All
commands exit 0 on success; bad input exits nonzero with a message on
stderr. The UVSPLAT_THREADS environment variable controls kernel
parallelism everywhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .checkpoint import atomic_write_text
from .config import ConfigError, load_config, serialize_config
from .fusion import GlobalGaussians
from .gradcheck import run_all
from .meshio import save_png
from .quaternions import quat_normalize
from .scene import PRESETS, SceneError, gen_scene, load_bundle
from .training import (
    evaluate,
    load_state,
    precompute_frames,
    render_stage1,
    render_stage2,
    train_stage1,
    train_stage2,
)


class CLIError(RuntimeError):
    pass


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise CLIError(f"invalid size '{text}', expected WxH") from e


def cmd_gen_scene(args) -> int:
    gen_scene(
        args.preset, args.seed, args.out,
        image_size=args.size, n_frames=args.frames,
    )
    print(f"wrote scene bundle to {args.out}")
    return 0


def _load_scene_and_config(config_path):
    cfg = load_config(config_path)
    if not cfg.scene:
        raise CLIError("config has no scene path")
    scene = load_bundle(cfg.scene)
    return cfg, scene


def cmd_train(args) -> int:
    cfg, scene = _load_scene_and_config(args.config)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "config.json"), serialize_config(cfg))
    frame_data, _ = precompute_frames(scene, cfg.uv_size)
    cond_dim = frame_data[0].cond.dim

    state = None
    if args.stage in ("1", "all"):
        state, res = train_stage1(scene, cfg, out_dir=out_dir, frame_data=frame_data)
        print(f"stage 1 done: {len(res.losses)} iters, "
              f"final loss {res.losses[-1]:.6f}, ckpt {res.checkpoint_path}")
    if args.stage in ("2", "all"):
        if state is None:
            path = os.path.join(out_dir, "stage1.ckpt")
            if not os.path.exists(path):
                raise CLIError(f"stage-2 training needs {path}; run --stage 1 first")
            state, _ = load_state(path, cfg, cond_dim)
        state, res = train_stage2(scene, cfg, state, out_dir=out_dir,
                                  frame_data=frame_data)
        print(f"stage 2 done: {len(res.losses)} iters, "
              f"final loss {res.losses[-1]:.6f}, ckpt {res.checkpoint_path}")
    return 0


def _state_for_ckpt(ckpt, config_path):
    if config_path is None:
        config_path = os.path.join(os.path.dirname(ckpt) or ".", "config.json")
    if not os.path.exists(config_path):
        raise CLIError(f"config not found at {config_path}")
    cfg, scene = _load_scene_and_config(config_path)
    frame_data, _ = precompute_frames(scene, cfg.uv_size)
    state, _ = load_state(ckpt, cfg, frame_data[0].cond.dim)
    return cfg, scene, frame_data, state


def cmd_render(args) -> int:
    cfg, scene, frame_data, state = _state_for_ckpt(args.ckpt, args.config)
    if not 0 <= args.frame < scene.n_frames:
        raise CLIError(f"frame {args.frame} out of range [0, {scene.n_frames})")
    fd = frame_data[args.frame]
    use_base = args.base_only or state.dyn_model is None
    if use_base:
        img = render_stage1(state, fd, scene.background)
    else:
        img = render_stage2(state, fd, scene.background)
    save_png(args.out, img)
    print(f"wrote {args.out} ({'stage-1' if use_base else 'stage-2'} path)")
    return 0


def cmd_eval(args) -> int:
    cfg, scene, frame_data, state = _state_for_ckpt(args.ckpt, args.config)
    stage = 1 if state.dyn_model is None else 2
    rows = []
    for name, idx in (("train", scene.train_idx), ("test", scene.test_idx)):
        m = evaluate(state, scene, frame_data, idx, stage)
        rows.append((name, m))
    print(f"{'split':<8}{'l1':>12}{'psnr':>12}{'ssim':>12}")
    for name, m in rows:
        print(f"{name:<8}{m['l1']:>12.6f}{m['psnr']:>12.4f}{m['ssim']:>12.6f}")
    if args.json:
        atomic_write_text(args.json, json.dumps(
            {name: m for name, m in rows}, indent=2, sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    ok, rows = run_all(seed=args.seed)
    print(f"{'check':<20}{'max rel err':>14}  status")
    for name, err, passed in rows:
        print(f"{name:<20}{err:>14.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .camera import Camera, look_at
    from .rasterizer import render, thread_count

    w, h = _parse_size(args.size)
    rng = np.random.default_rng(0)
    n = args.gaussians
    g = GlobalGaussians(
        c=rng.uniform(0, 1, size=(n, 3)),
        o=rng.uniform(0.2, 0.9, size=n),
        mu=rng.uniform(-1, 1, size=(n, 3)),
        s=rng.uniform(0.02, 0.15, size=(n, 3)),
        r=quat_normalize(rng.standard_normal((n, 4))),
    )
    R, t = look_at(np.array([0.0, 0.0, -4.0]), np.zeros(3))
    f = 1.2 * w
    cam = Camera(rotation=R, translation=t, fx=f, fy=f,
                 cx=w / 2.0, cy=h / 2.0, width=w, height=h)
    bg = np.zeros(3)
    render(g, cam, bg)  # warm-up
    times = []
    for _ in range(10):
        t0 = time.perf_counter()
        render(g, cam, bg)
        times.append(time.perf_counter() - t0)
    best = min(times)
    mean = sum(times) / len(times)
    print(f"{w}x{h}, {n} gaussians, {thread_count()} thread(s)")
    print(f"best  {best * 1e3:8.2f} ms   {w * h / best:12.0f} px/s")
    print(f"mean  {mean * 1e3:8.2f} ms   {w * h / mean:12.0f} px/s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="uvsplat",
        description="Two-stage disentangled Gaussian head avatar pipeline",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic scene bundle")
    g.add_argument("--preset", required=True, choices=PRESETS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=64, help="square image side")
    g.add_argument("--frames", type=int, default=None)
    g.set_defaults(func=cmd_gen_scene)

    t = sub.add_parser("train", help="train stage 1 and/or stage 2")
    t.add_argument("--config", required=True)
    t.add_argument("--stage", choices=("1", "2", "all"), default="all")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render one frame from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--base-only", action="store_true",
                   help="use the stage-1 (base appearance) path")
    r.add_argument("--out", required=True)
    r.add_argument("--config", default=None,
                   help="defaults to config.json beside the checkpoint")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="metrics over the train/test splits")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--json", default=None, help="also write metrics as JSON")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference gradient suites")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_grad_check)

    b = sub.add_parser("bench", help="rasterizer throughput")
    b.add_argument("--size", default="256x256", help="image size WxH")
    b.add_argument("--gaussians", type=int, default=2000)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ConfigError, SceneError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
