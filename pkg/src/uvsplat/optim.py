"""Adam optimizer over named parameter tensors, plus cloud densification.

The optimizer owns first/second moment accumulators per parameter and can
remap per-Gaussian rows when the cloud grows or shrinks. Rows flagged as
quaternions are renormalized after every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GaussianCloud
from .quaternions import quat_normalize, quat_to_rot

GRAD_CLONE_THRESHOLD = 2e-3  # mean accumulated |d mu_l| triggering a clone
SPLIT_SCALE = 0.6  # exp(log_s) above this splits (reuses eps_scale)
SPLIT_SHRINK = np.log(1.6)
CLONE_JITTER = 0.01  # in units of the triangle's mean edge length


class OptimError(ValueError):
    pass


class Adam:
    """Standard Adam with bias correction over a dict of named tensors."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 quat_params=()):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.quat_params = set(quat_params)

    def step(self, grads: dict) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise OptimError(f"non-finite gradient for parameter '{name}'")
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1**self.t)
            v_hat = self.v[name] / (1 - self.b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if name in self.quat_params:
                p[...] = quat_normalize(p)

    def remap_rows(self, names, index_map: np.ndarray, new_rows: int) -> None:
        """Gather moment rows for surviving Gaussians; new rows start at zero.

        index_map[i] is the old row feeding new row i, or -1 for a fresh row.
        """
        for name in names:
            for store in (self.m, self.v):
                old = store[name]
                new = np.zeros((new_rows,) + old.shape[1:])
                keep = index_map >= 0
                new[keep] = old[index_map[keep]]
                store[name] = new

    def state_tensors(self, prefix: str = "adam") -> dict:
        out = {f"{prefix}.t": np.array([float(self.t)])}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict, prefix: str = "adam") -> None:
        self.t = int(tensors[f"{prefix}.t"][0])
        for name in self.params:
            self.m[name] = tensors[f"{prefix}.m.{name}"].copy()
            self.v[name] = tensors[f"{prefix}.v.{name}"].copy()


@dataclass
class DensifyStats:
    """Accumulated per-Gaussian positional gradient norms since last call."""

    grad_sum: np.ndarray  # (N,) sum of ||d L / d mu_l||
    count: int

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(grad_sum=np.zeros(n), count=0)

    def accumulate(self, d_mu_l: np.ndarray) -> None:
        self.grad_sum += np.linalg.norm(d_mu_l, axis=1)
        self.count += 1

    def mean(self) -> np.ndarray:
        return self.grad_sum / max(self.count, 1)


def densify_and_prune(
    cloud: GaussianCloud,
    opacity: np.ndarray,
    stats: DensifyStats,
    tri_k: np.ndarray,
    rng: np.random.Generator,
    prune_opacity: float = 0.05,
    grad_threshold: float = GRAD_CLONE_THRESHOLD,
    split_scale: float = SPLIT_SCALE,
):
    """Prune transparent Gaussians, clone high-gradient ones, split large ones.

    Never leaves a triangle without a Gaussian. Returns (new_cloud,
    index_map) where index_map[i] is the old row feeding new row i, or -1
    for freshly created Gaussians (their optimizer moments start at zero).
    """
    grad_mean = stats.mean()
    max_scale = np.exp(cloud.log_s_l).max(axis=1)

    # prune, keeping at least one Gaussian per occupied triangle
    drop = opacity < prune_opacity
    if np.any(drop):
        for tri in np.unique(cloud.tri_index[drop]):
            members = np.nonzero(cloud.tri_index == tri)[0]
            if np.all(drop[members]):
                keep_one = members[np.argmax(opacity[members])]
                drop[keep_one] = False
    keep = ~drop

    split = keep & (max_scale > split_scale)
    clone = keep & ~split & (grad_mean > grad_threshold)

    new_mu, new_ls, new_r, new_tri, index_map = [], [], [], [], []

    surv = np.nonzero(keep & ~split)[0]
    new_mu.append(cloud.mu_l[surv])
    new_ls.append(cloud.log_s_l[surv])
    new_r.append(cloud.r_l[surv])
    new_tri.append(cloud.tri_index[surv])
    index_map.append(surv)

    for i in np.nonzero(clone)[0]:
        jitter = CLONE_JITTER * tri_k[cloud.tri_index[i]] * rng.standard_normal(3)
        new_mu.append(cloud.mu_l[i][None] + jitter[None])
        new_ls.append(cloud.log_s_l[i][None])
        new_r.append(cloud.r_l[i][None])
        new_tri.append(cloud.tri_index[i][None])
        index_map.append(np.array([-1]))

    for i in np.nonzero(split)[0]:
        axis_idx = int(np.argmax(cloud.log_s_l[i]))
        R = quat_to_rot(cloud.r_l[i][None])[0]
        direction = R[:, axis_idx]
        sigma = float(np.exp(cloud.log_s_l[i][axis_idx]))
        for sign in (1.0, -1.0):
            new_mu.append((cloud.mu_l[i] + sign * 0.5 * sigma * direction)[None])
            new_ls.append((cloud.log_s_l[i] - SPLIT_SHRINK)[None])
            new_r.append(cloud.r_l[i][None])
            new_tri.append(cloud.tri_index[i][None])
            index_map.append(np.array([-1]))

    new_cloud = GaussianCloud(
        mu_l=np.concatenate(new_mu),
        log_s_l=np.concatenate(new_ls),
        r_l=np.concatenate(new_r),
        tri_index=np.concatenate(new_tri),
    )
    return new_cloud, np.concatenate(index_map)
