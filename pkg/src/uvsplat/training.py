"""Two-stage training: losses, Adam, densification schedule, checkpoints.

Stage 1 jointly optimizes the Gaussian cloud geometry and the base
appearance model; stage 2 freezes both and trains the residual appearance
and deformation models on the fused render. Per-frame mesh state (deformed
mesh, frames, uv charts, baked normal map) is precomputed once per scene,
which leaves the per-iteration cost at forward + analytic backward.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write_text, config_hash, read_tensors, write_tensors
from .config import ProjectConfig
from .fields import (
    ConditionedMLP,
    ConditionVector,
    FieldModel,
    LearnableUVMap,
    base_forward,
    dyn_forward,
    field_backward,
    geo_forward,
)
from .fusion import assemble_backward, assemble_stage1, fuse, fuse_backward
from .geometry import GaussianCloud, init_cloud, triangle_frames, deform
from .losses import eval_metrics, photometric_loss, reg_losses
from .optim import Adam, DensifyStats, densify_and_prune
from .rasterizer import render, render_backward
from .scene import SceneBundle
from .uvfield import UVMap, bake_normal_map, build_texel_table, local_uv_charts


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Loss became non-finite; carries the last good state snapshot."""

    def __init__(self, iteration: int, snapshot: dict):
        super().__init__(f"training diverged at iteration {iteration}")
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass
class FrameData:
    frames: object
    charts: object
    normal_map: UVMap
    cond: ConditionVector
    camera: object
    gt: np.ndarray


def precompute_frames(scene: SceneBundle, uv_size: int):
    """Deform, frame, chart and bake every frame of the scene once."""
    table = build_texel_table(scene.rig.rest, uv_size)
    out = []
    prev = None
    for i in range(scene.n_frames):
        mesh_i = deform(scene.rig, scene.psi[i], scene.theta[i])
        frames_i = triangle_frames(mesh_i, prev=prev)
        prev = frames_i
        charts_i = local_uv_charts(mesh_i, frames_i)
        U = bake_normal_map(mesh_i, scene.cameras[i], table)
        out.append(
            FrameData(
                frames=frames_i, charts=charts_i, normal_map=U,
                cond=scene.cond(i), camera=scene.cameras[i], gt=scene.gt_images[i],
            )
        )
    return out, table


def make_base_model(cfg: ProjectConfig, seed: int) -> FieldModel:
    if cfg.train.base_model == "map":
        return LearnableUVMap(cfg.uv_size, cfg.uv_size, 4)
    return ConditionedMLP(
        cfg.uv_size, cfg.uv_size, out_channels=4, in_channels=3,
        hidden=(cfg.train.hidden, cfg.train.hidden), seed=seed,
    )


def make_dyn_model(cfg: ProjectConfig, cond_dim: int, seed: int) -> ConditionedMLP:
    return ConditionedMLP(
        cfg.uv_size, cfg.uv_size, out_channels=4, in_channels=3, cond_dim=cond_dim,
        hidden=(cfg.train.hidden, cfg.train.hidden), seed=seed,
    )


def make_geo_model(cfg: ProjectConfig, cond_dim: int, seed: int) -> ConditionedMLP:
    return ConditionedMLP(
        cfg.uv_size, cfg.uv_size, out_channels=10, cond_dim=cond_dim,
        hidden=(cfg.train.hidden, cfg.train.hidden),
        grid_size=cfg.train.geo_grid, seed=seed,
    )


@dataclass
class AvatarState:
    """Everything needed to render: cloud plus field models."""

    cloud: GaussianCloud
    base_model: FieldModel
    dyn_model: ConditionedMLP | None = None
    geo_model: ConditionedMLP | None = None
    iteration: int = 0

    def tensors(self, cfg: ProjectConfig, extra: dict | None = None) -> dict:
        out = {
            "meta.config_hash": np.array([config_hash(json.loads(_cfg_json(cfg)))]),
            "meta.iteration": np.array([float(self.iteration)]),
            "cloud.mu_l": self.cloud.mu_l,
            "cloud.log_s_l": self.cloud.log_s_l,
            "cloud.r_l": self.cloud.r_l,
            "cloud.tri_index": self.cloud.tri_index.astype(float),
        }
        for prefix, model in (("base", self.base_model), ("dyn", self.dyn_model),
                              ("geo", self.geo_model)):
            if model is None:
                continue
            for name, p in model.params.items():
                out[f"{prefix}.{name}"] = p
        if extra:
            out.update(extra)
        return out

    def save(self, path, cfg: ProjectConfig, extra: dict | None = None) -> None:
        write_tensors(path, self.tensors(cfg, extra))


def _cfg_json(cfg: ProjectConfig) -> str:
    from .config import serialize_config

    return serialize_config(cfg)


def load_state(path, cfg: ProjectConfig, cond_dim: int, with_stage2: bool = False):
    """Rebuild an AvatarState (and the raw tensor dict) from a checkpoint."""
    t = read_tensors(path)
    cloud = GaussianCloud(
        mu_l=t["cloud.mu_l"], log_s_l=t["cloud.log_s_l"], r_l=t["cloud.r_l"],
        tri_index=t["cloud.tri_index"].astype(np.int64),
    )
    base = make_base_model(cfg, seed=cfg.train.seed)
    for name in base.params:
        base.params[name][...] = t[f"base.{name}"]
    dyn = geo = None
    if with_stage2 or any(k.startswith("dyn.") for k in t):
        dyn = make_dyn_model(cfg, cond_dim, seed=cfg.train.seed + 1)
        geo = make_geo_model(cfg, cond_dim, seed=cfg.train.seed + 2)
        if any(k.startswith("dyn.") for k in t):
            for name in dyn.params:
                dyn.params[name][...] = t[f"dyn.{name}"]
            for name in geo.params:
                geo.params[name][...] = t[f"geo.{name}"]
    state = AvatarState(
        cloud=cloud, base_model=base, dyn_model=dyn, geo_model=geo,
        iteration=int(t["meta.iteration"][0]),
    )
    return state, t


@dataclass
class TrainResult:
    losses: np.ndarray
    metrics_rows: list = field(default_factory=list)
    checkpoint_path: str | None = None


def _frame_order(rng: np.random.Generator, train_idx: np.ndarray, n_iters: int):
    order = []
    while len(order) < n_iters:
        order.extend(rng.permutation(train_idx).tolist())
    return order[:n_iters]


def render_stage1(state: AvatarState, fd: FrameData, background):
    B, _ = base_forward(state.base_model, fd.normal_map)
    gg, _ = assemble_stage1(state.cloud, fd.frames, fd.charts, B)
    img, _ = render(gg, fd.camera, background)
    return img


def render_stage2(state: AvatarState, fd: FrameData, background,
                  resample_after_deform: bool = True):
    B, _ = base_forward(state.base_model, fd.normal_map)
    Rmap, _ = dyn_forward(state.dyn_model, fd.normal_map, fd.cond)
    dG, _ = geo_forward(state.geo_model, fd.cond)
    gg, _ = fuse(state.cloud, fd.frames, fd.charts, B, Rmap, dG,
                 resample_after_deform=resample_after_deform)
    img, _ = render(gg, fd.camera, background)
    return img


def evaluate(state: AvatarState, scene: SceneBundle, frame_data, idx, stage: int):
    """Mean metrics over the given frame indices."""
    acc = {"l1": 0.0, "psnr": 0.0, "ssim": 0.0}
    for i in idx:
        fd = frame_data[i]
        img = (render_stage1 if stage == 1 else render_stage2)(
            state, fd, scene.background
        )
        m = eval_metrics(img, fd.gt)
        for k in acc:
            acc[k] += m[k]
    return {k: v / len(idx) for k, v in acc.items()}


def train_stage1(
    scene: SceneBundle,
    cfg: ProjectConfig,
    out_dir=None,
    perceptual_hook=None,
    frame_data=None,
    n_iters: int | None = None,
) -> tuple[AvatarState, TrainResult]:
    """Jointly optimize cloud geometry and the base appearance model."""
    cfg.validate()
    tcfg = cfg.train
    lw = cfg.loss
    if frame_data is None:
        frame_data, _ = precompute_frames(scene, cfg.uv_size)
    n_iters = tcfg.stage1_iters if n_iters is None else n_iters

    cloud = init_cloud(scene.rig.rest)
    base = make_base_model(cfg, seed=tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    order = _frame_order(rng, scene.train_idx, n_iters)
    tri_k = triangle_frames(scene.rig.rest).k

    params = _stage1_params(cloud, base)
    opt = Adam(params, lr=tcfg.lr_stage1, betas=(tcfg.adam_beta1, tcfg.adam_beta2),
               eps=tcfg.adam_eps, quat_params={"cloud.r_l"})
    stats = DensifyStats.zeros(len(cloud))
    state = AvatarState(cloud=cloud, base_model=base)

    losses = np.empty(n_iters)
    rows = []
    snapshot = state.tensors(cfg)
    last_opacity = np.full(len(cloud), 0.5)

    for it in range(n_iters):
        fd = frame_data[order[it]]
        B, rec_b = base_forward(base, fd.normal_map)
        gg, rec_f = assemble_stage1(cloud, fd.frames, fd.charts, B)
        img, graph = render(gg, fd.camera, scene.background)
        loss, d_img = photometric_loss(img, fd.gt, lw.lambda_l1)
        l_xyz, l_scale, rg = reg_losses(lw.eps_xyz, lw.eps_scale,
                                        cloud.mu_l, cloud.log_s_l)
        loss = loss + lw.lambda_xyz * l_xyz + lw.lambda_scale * l_scale
        if perceptual_hook is not None:
            p_loss, p_grad = perceptual_hook(img, fd.gt)
            loss = loss + lw.lambda_lpips * p_loss
            d_img = d_img + lw.lambda_lpips * p_grad
        losses[it] = loss
        if not np.isfinite(loss):
            raise DivergenceError(it, snapshot)

        g = render_backward(graph, d_img)
        d_B, d_mu_l, d_ls, d_r_l = assemble_backward(
            rec_f, g["c"], g["o"], g["mu"], g["s"], g["r"]
        )
        base.zero_grad()
        field_backward(base, rec_b, d_B)
        d_mu_l = d_mu_l + lw.lambda_xyz * rg["mu_l"]
        d_ls = d_ls + lw.lambda_scale * rg["log_s_l"]
        stats.accumulate(d_mu_l)
        last_opacity = gg.o

        grads = {"cloud.mu_l": d_mu_l, "cloud.log_s_l": d_ls, "cloud.r_l": d_r_l}
        grads.update({f"base.{k}": v for k, v in base.grads.items()})
        opt.step(grads)
        state.iteration = it + 1

        if (it + 1) % 25 == 0 or it == 0:
            m = eval_metrics(img, fd.gt)
            rows.append((it + 1, float(loss), m["l1"], m["psnr"], m["ssim"]))
        if tcfg.densify_interval > 0 and (it + 1) % tcfg.densify_interval == 0:
            snapshot = state.tensors(cfg)
            cloud, index_map = densify_and_prune(
                cloud, last_opacity, stats, tri_k, rng,
                prune_opacity=tcfg.prune_opacity,
            )
            state.cloud = cloud
            params = _stage1_params(cloud, base)
            opt.params = params
            opt.remap_rows(["cloud.mu_l", "cloud.log_s_l", "cloud.r_l"],
                           index_map, len(cloud))
            stats = DensifyStats.zeros(len(cloud))
            last_opacity = np.full(len(cloud), 0.5)

    result = TrainResult(losses=losses, metrics_rows=rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "stage1.ckpt")
        state.save(path, cfg)
        _write_metrics(out_dir, "stage1", rows, losses)
        result.checkpoint_path = path
    return state, result


def _stage1_params(cloud: GaussianCloud, base: FieldModel) -> dict:
    params = {
        "cloud.mu_l": cloud.mu_l,
        "cloud.log_s_l": cloud.log_s_l,
        "cloud.r_l": cloud.r_l,
    }
    params.update({f"base.{k}": v for k, v in base.params.items()})
    return params


def train_stage2(
    scene: SceneBundle,
    cfg: ProjectConfig,
    stage1_state: AvatarState,
    out_dir=None,
    perceptual_hook=None,
    frame_data=None,
    n_iters: int | None = None,
) -> tuple[AvatarState, TrainResult]:
    """Train residual appearance and deformation models; stage 1 frozen."""
    cfg.validate()
    tcfg = cfg.train
    lw = cfg.loss
    if frame_data is None:
        frame_data, _ = precompute_frames(scene, cfg.uv_size)
    n_iters = tcfg.stage2_iters if n_iters is None else n_iters
    cond_dim = frame_data[0].cond.dim

    state = AvatarState(
        cloud=stage1_state.cloud,
        base_model=stage1_state.base_model,
        dyn_model=make_dyn_model(cfg, cond_dim, seed=tcfg.seed + 1),
        geo_model=make_geo_model(cfg, cond_dim, seed=tcfg.seed + 2),
    )
    dyn, geo = state.dyn_model, state.geo_model
    cloud, base = state.cloud, state.base_model
    rng = np.random.default_rng(tcfg.seed + 100)
    order = _frame_order(rng, scene.train_idx, n_iters)

    params = {f"dyn.{k}": v for k, v in dyn.params.items()}
    params.update({f"geo.{k}": v for k, v in geo.params.items()})
    opt = Adam(params, lr=tcfg.lr_stage2, betas=(tcfg.adam_beta1, tcfg.adam_beta2),
               eps=tcfg.adam_eps)

    losses = np.empty(n_iters)
    rows = []
    snapshot = state.tensors(cfg)

    for it in range(n_iters):
        fd = frame_data[order[it]]
        B, _ = base_forward(base, fd.normal_map)
        Rmap, rec_d = dyn_forward(dyn, fd.normal_map, fd.cond)
        dG, rec_g = geo_forward(geo, fd.cond)
        gg, rec_f = fuse(cloud, fd.frames, fd.charts, B, Rmap, dG)
        img, graph = render(gg, fd.camera, scene.background)
        loss, d_img = photometric_loss(img, fd.gt, lw.lambda_l1)
        l_xyz, l_scale, rg = reg_losses(
            lw.eps_xyz, lw.eps_scale, cloud.mu_l, cloud.log_s_l,
            mu_l2=rec_f.mu_p, log_s_l2=rec_f.ls_p,
        )
        loss = loss + lw.lambda_xyz * l_xyz + lw.lambda_scale * l_scale
        if perceptual_hook is not None:
            p_loss, p_grad = perceptual_hook(img, fd.gt)
            loss = loss + lw.lambda_lpips * p_loss
            d_img = d_img + lw.lambda_lpips * p_grad
        losses[it] = loss
        if not np.isfinite(loss):
            raise DivergenceError(it, snapshot)

        g = render_backward(graph, d_img)
        _, d_Rmap, d_dG, _, _, _ = fuse_backward(
            rec_f, g["c"], g["o"], g["mu"], g["s"], g["r"],
            d_mu_p_extra=lw.lambda_xyz * rg["mu_l2"],
            d_ls_p_extra=lw.lambda_scale * rg["log_s_l2"],
        )
        dyn.zero_grad()
        geo.zero_grad()
        field_backward(dyn, rec_d, d_Rmap)
        field_backward(geo, rec_g, d_dG)
        grads = {f"dyn.{k}": v for k, v in dyn.grads.items()}
        grads.update({f"geo.{k}": v for k, v in geo.grads.items()})
        opt.step(grads)
        state.iteration = it + 1
        if (it + 1) % 25 == 0 or it == 0:
            m = eval_metrics(img, fd.gt)
            rows.append((it + 1, float(loss), m["l1"], m["psnr"], m["ssim"]))
        if (it + 1) % 500 == 0:
            snapshot = state.tensors(cfg)

    result = TrainResult(losses=losses, metrics_rows=rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "stage2.ckpt")
        state.save(path, cfg)
        _write_metrics(out_dir, "stage2", rows, losses)
        result.checkpoint_path = path
    return state, result


def train_residual_only(
    scene: SceneBundle,
    cfg: ProjectConfig,
    n_iters: int,
    frame_data=None,
) -> AvatarState:
    """Single-stage ablation: appearance comes only from the residual branch.

    The base map is identically zero; cloud geometry plus both residual
    models are trained jointly from scratch.
    """
    cfg.validate()
    tcfg = cfg.train
    lw = cfg.loss
    if frame_data is None:
        frame_data, _ = precompute_frames(scene, cfg.uv_size)
    cond_dim = frame_data[0].cond.dim

    cloud = init_cloud(scene.rig.rest)
    zero_base = LearnableUVMap(cfg.uv_size, cfg.uv_size, 4)  # stays zero
    dyn = make_dyn_model(cfg, cond_dim, seed=tcfg.seed + 1)
    geo = make_geo_model(cfg, cond_dim, seed=tcfg.seed + 2)
    state = AvatarState(cloud=cloud, base_model=zero_base, dyn_model=dyn, geo_model=geo)
    rng = np.random.default_rng(tcfg.seed + 200)
    order = _frame_order(rng, scene.train_idx, n_iters)

    params = {
        "cloud.mu_l": cloud.mu_l,
        "cloud.log_s_l": cloud.log_s_l,
        "cloud.r_l": cloud.r_l,
    }
    params.update({f"dyn.{k}": v for k, v in dyn.params.items()})
    params.update({f"geo.{k}": v for k, v in geo.params.items()})
    opt = Adam(params, lr=tcfg.lr_stage1, betas=(tcfg.adam_beta1, tcfg.adam_beta2),
               eps=tcfg.adam_eps, quat_params={"cloud.r_l"})
    B_zero, _ = zero_base.forward()

    for it in range(n_iters):
        fd = frame_data[order[it]]
        Rmap, rec_d = dyn_forward(dyn, fd.normal_map, fd.cond)
        dG, rec_g = geo_forward(geo, fd.cond)
        gg, rec_f = fuse(cloud, fd.frames, fd.charts, B_zero, Rmap, dG)
        img, graph = render(gg, fd.camera, scene.background)
        loss, d_img = photometric_loss(img, fd.gt, lw.lambda_l1)
        l_xyz, l_scale, rg = reg_losses(
            lw.eps_xyz, lw.eps_scale, cloud.mu_l, cloud.log_s_l,
            mu_l2=rec_f.mu_p, log_s_l2=rec_f.ls_p,
        )
        loss = loss + lw.lambda_xyz * l_xyz + lw.lambda_scale * l_scale
        if not np.isfinite(loss):
            raise DivergenceError(it, state.tensors(cfg))
        g = render_backward(graph, d_img)
        _, d_Rmap, d_dG, d_mu_l, d_ls, d_r_l = fuse_backward(
            rec_f, g["c"], g["o"], g["mu"], g["s"], g["r"],
            d_mu_p_extra=lw.lambda_xyz * rg["mu_l2"],
            d_ls_p_extra=lw.lambda_scale * rg["log_s_l2"],
        )
        dyn.zero_grad()
        geo.zero_grad()
        field_backward(dyn, rec_d, d_Rmap)
        field_backward(geo, rec_g, d_dG)
        grads = {
            "cloud.mu_l": d_mu_l + lw.lambda_xyz * rg["mu_l"],
            "cloud.log_s_l": d_ls + lw.lambda_scale * rg["log_s_l"],
            "cloud.r_l": d_r_l,
        }
        grads.update({f"dyn.{k}": v for k, v in dyn.grads.items()})
        grads.update({f"geo.{k}": v for k, v in geo.grads.items()})
        opt.step(grads)
        state.iteration = it + 1
    return state


def _write_metrics(out_dir, stage: str, rows, losses) -> None:
    lines = ["iter,loss,l1,psnr,ssim"]
    lines += [f"{r[0]},{r[1]:.10g},{r[2]:.10g},{r[3]:.10g},{r[4]:.10g}" for r in rows]
    atomic_write_text(os.path.join(out_dir, f"metrics_{stage}.csv"), "\n".join(lines) + "\n")
    summary = {
        "final_loss": float(losses[-1]) if len(losses) else None,
        "iterations": int(len(losses)),
    }
    atomic_write_text(os.path.join(out_dir, f"summary_{stage}.json"),
                      json.dumps(summary, indent=2, sort_keys=True))
