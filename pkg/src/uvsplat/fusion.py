"""Assembly of renderable Gaussians.

Stage 1 samples base color/opacity logits at each Gaussian's uv position.
Stage 2 additionally samples local geometric deltas, applies them, then
resamples the residual appearance at the *post-deformation* uv position
before summing logits and activating. The full analytic adjoint is
provided for both paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BindRecord, GaussianCloud, TriangleFrames, bind_backward, bind_to_global
from .quaternions import normalize_backward
from .uvfield import (
    SampleRecord,
    UVCharts,
    UVMap,
    UVRecord,
    sample,
    sample_backward,
    uv_for_cloud,
    uv_for_cloud_backward,
)


class FusionError(ValueError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GlobalGaussians:
    """World-space renderable Gaussians."""

    c: np.ndarray  # (N, 3) rgb in [0, 1]
    o: np.ndarray  # (N,) opacity in [0, 1]
    mu: np.ndarray  # (N, 3)
    s: np.ndarray  # (N, 3) positive scales
    r: np.ndarray  # (N, 4) unit quaternions


@dataclass
class FusionRecord:
    """Everything needed to replay the forward pass in the adjoint."""

    stage: int
    n: int
    uv_rec: UVRecord  # uv(mu_l)
    base_rec: SampleRecord  # sample of B at p
    logits: np.ndarray  # (N, 4) pre-activation sums
    bind_rec: BindRecord
    # stage-2 only:
    geo_rec: SampleRecord | None = None
    uv2_rec: UVRecord | None = None  # uv(mu'_l)
    res_rec: SampleRecord | None = None
    r_raw: np.ndarray | None = None  # r_l + d_r before renormalization
    mu_p: np.ndarray | None = None  # deformed local means mu_l + d_mu
    ls_p: np.ndarray | None = None  # deformed local log-scales
    resampled: bool = True


def assemble_stage1(
    cloud: GaussianCloud, frames: TriangleFrames, charts: UVCharts, B: UVMap
):
    """Stage-1 Gaussians: base logits sampled at uv(mu_l), sigmoid activated."""
    if B.channels != 4:
        raise FusionError("base map must have 4 channels (rgb + opacity logits)")
    p, uv_rec = uv_for_cloud(cloud.mu_l, cloud.tri_index, charts)
    logits, base_rec = sample(B, p)
    c = _sigmoid(logits[:, :3])
    o = _sigmoid(logits[:, 3])
    mu, s, r, bind_rec = bind_to_global(
        cloud.mu_l, cloud.log_s_l, cloud.r_l, cloud.tri_index, frames
    )
    record = FusionRecord(
        stage=1, n=len(cloud), uv_rec=uv_rec, base_rec=base_rec, logits=logits,
        bind_rec=bind_rec,
    )
    return GlobalGaussians(c=c, o=o, mu=mu, s=s, r=r), record


def fuse(
    cloud: GaussianCloud,
    frames: TriangleFrames,
    charts: UVCharts,
    B: UVMap,
    Rmap: UVMap,
    dG: UVMap,
    resample_after_deform: bool = True,
):
    """Stage-2 fusion: apply geometric deltas, resample residuals, sum logits.

    ``resample_after_deform=False`` is a test-only ablation that samples the
    residual map at the pre-deformation uv position.
    """
    if B.channels != 4 or Rmap.channels != 4:
        raise FusionError("appearance maps must have 4 channels")
    if dG.channels != 10:
        raise FusionError("deformation map must have 10 channels")
    p, uv_rec = uv_for_cloud(cloud.mu_l, cloud.tri_index, charts)
    base_logits, base_rec = sample(B, p)
    deltas, geo_rec = sample(dG, p)
    d_mu, d_ls, d_r = deltas[:, 0:3], deltas[:, 3:6], deltas[:, 6:10]

    mu_p = cloud.mu_l + d_mu
    ls_p = cloud.log_s_l + d_ls
    r_raw = cloud.r_l + d_r
    norms = np.linalg.norm(r_raw, axis=1)
    if np.any(norms < 1e-8):
        raise FusionError("degenerate rotation: |r_l + d_r| < 1e-8")
    r_p = r_raw / norms[:, None]

    p2, uv2_rec = uv_for_cloud(mu_p, cloud.tri_index, charts)
    res_logits, res_rec = sample(Rmap, p2 if resample_after_deform else p)
    logits = base_logits + res_logits
    c = _sigmoid(logits[:, :3])
    o = _sigmoid(logits[:, 3])
    mu, s, r, bind_rec = bind_to_global(mu_p, ls_p, r_p, cloud.tri_index, frames)
    record = FusionRecord(
        stage=2, n=len(cloud), uv_rec=uv_rec, base_rec=base_rec, logits=logits,
        bind_rec=bind_rec, geo_rec=geo_rec, uv2_rec=uv2_rec, res_rec=res_rec,
        r_raw=r_raw, mu_p=mu_p, ls_p=ls_p, resampled=resample_after_deform,
    )
    return GlobalGaussians(c=c, o=o, mu=mu, s=s, r=r), record


def _activation_backward(record: FusionRecord, d_c, d_o):
    sig_rgb = _sigmoid(record.logits[:, :3])
    sig_o = _sigmoid(record.logits[:, 3])
    d_logits = np.empty((record.n, 4))
    d_logits[:, :3] = d_c * sig_rgb * (1.0 - sig_rgb)
    d_logits[:, 3] = d_o * sig_o * (1.0 - sig_o)
    return d_logits


def assemble_backward(record: FusionRecord, d_c, d_o, d_mu, d_s, d_r):
    """Adjoint of assemble_stage1 -> (d_B, d_mu_l, d_log_s_l, d_r_l)."""
    if record.stage != 1:
        raise FusionError("record is not from assemble_stage1")
    d_logits = _activation_backward(record, d_c, d_o)
    d_B, d_p = sample_backward(record.base_rec, d_logits)
    d_mu_l = uv_for_cloud_backward(record.uv_rec, d_p)
    g_mu_l, d_log_s_l, d_r_l = bind_backward(record.bind_rec, d_mu, d_s, d_r)
    d_mu_l += g_mu_l
    return d_B, d_mu_l, d_log_s_l, d_r_l


def fuse_backward(record: FusionRecord, d_c, d_o, d_mu, d_s, d_r,
                  d_mu_p_extra=None, d_ls_p_extra=None):
    """Adjoint of fuse.

    Returns (d_B, d_Rmap, d_dG, d_mu_l, d_log_s_l, d_r_l); the cloud
    gradients include all paths, among them the resampling path
    d(residual sample) -> d(uv(mu'_l)) -> d(delta mu) -> d(dG).
    ``d_mu_p_extra``/``d_ls_p_extra`` inject gradient applied directly to
    the deformed local parameters, e.g. from regularizers on them.
    """
    if record.stage != 2:
        raise FusionError("record is not from fuse")
    if not record.resampled:
        raise FusionError("no adjoint for the resample_after_deform=False ablation")
    d_logits = _activation_backward(record, d_c, d_o)
    d_B, d_p = sample_backward(record.base_rec, d_logits)
    d_Rmap, d_p2 = sample_backward(record.res_rec, d_logits)

    # bind adjoint gives gradients at the deformed local parameters
    d_mu_p, d_ls_p, d_r_p = bind_backward(record.bind_rec, d_mu, d_s, d_r)
    d_mu_p = d_mu_p + uv_for_cloud_backward(record.uv2_rec, d_p2)
    if d_mu_p_extra is not None:
        d_mu_p = d_mu_p + d_mu_p_extra
    if d_ls_p_extra is not None:
        d_ls_p = d_ls_p + d_ls_p_extra

    d_r_raw = normalize_backward(record.r_raw, d_r_p)

    d_deltas = np.concatenate([d_mu_p, d_ls_p, d_r_raw], axis=1)
    d_dG, d_p_geo = sample_backward(record.geo_rec, d_deltas)
    d_p = d_p + d_p_geo
    d_mu_l = d_mu_p + uv_for_cloud_backward(record.uv_rec, d_p)
    d_log_s_l = d_ls_p
    d_r_l = d_r_raw
    return d_B, d_Rmap, d_dG, d_mu_l, d_log_s_l, d_r_l
