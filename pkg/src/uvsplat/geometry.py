"""Triangle meshes, blendshape deformation, local frames, and Gaussian binding.

Every Gaussian lives in the local frame of one mesh triangle. A frame is
(T, R, k): centroid, orientation, mean edge length. Local parameters are
mapped to world space with

    mu = k R mu_l + T,   s = k exp(log_s_l),   r = quat(R) ⊗ r_l

and the exact adjoint of that map is provided for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quaternions import (
    axis_angle_rot,
    normalize_backward,
    quat_identity,
    quat_mul,
    quat_mul_left_backward,
    quat_normalize,
    rot_to_quat,
)

DEGENERATE_EDGE = 1e-9


class GeometryError(ValueError):
    pass


@dataclass
class TriMesh:
    """Indexed triangle mesh with one uv coordinate per face corner."""

    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    uv_coords: np.ndarray  # (F, 3, 2) in [0, 1]^2

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.uv_coords = np.asarray(self.uv_coords, dtype=float)

    def validate(self) -> None:
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise GeometryError("triangle index out of range")
        if self.triangles.min(initial=0) < 0:
            raise GeometryError("negative triangle index")
        if np.any(self.uv_coords < 0.0) or np.any(self.uv_coords > 1.0):
            raise GeometryError("uv coordinates must lie in [0,1]")
        corners = self.vertices[self.triangles]  # (F,3,3)
        e = np.stack(
            [
                corners[:, 1] - corners[:, 0],
                corners[:, 2] - corners[:, 1],
                corners[:, 0] - corners[:, 2],
            ],
            axis=1,
        )
        lengths = np.linalg.norm(e, axis=2)
        bad = np.nonzero(np.any(lengths <= DEGENERATE_EDGE, axis=1))[0]
        if bad.size:
            raise GeometryError(f"degenerate rest-pose triangle {bad[0]}")

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class BlendshapeRig:
    """Rest mesh plus K linear shape deltas and P pose rotation axes.

    pose_axes[p] is a unit rotation axis; pose_translations[p] a direction
    translated proportionally to theta[p]. deform(0, 0) is the rest mesh.
    """

    rest: TriMesh
    shape_deltas: np.ndarray  # (K, V, 3)
    pose_axes: np.ndarray  # (P, 3)
    pose_translations: np.ndarray = field(default=None)

    def __post_init__(self):
        self.shape_deltas = np.asarray(self.shape_deltas, dtype=float)
        self.pose_axes = np.asarray(self.pose_axes, dtype=float)
        if self.pose_translations is None:
            self.pose_translations = np.zeros_like(self.pose_axes)
        else:
            self.pose_translations = np.asarray(self.pose_translations, dtype=float)
        if self.shape_deltas.ndim != 3 or self.shape_deltas.shape[1] != len(self.rest.vertices):
            raise GeometryError("shape_deltas must be (K, V, 3)")

    @property
    def num_shapes(self) -> int:
        return self.shape_deltas.shape[0]

    @property
    def num_poses(self) -> int:
        return self.pose_axes.shape[0]


def deform(rig: BlendshapeRig, psi: np.ndarray, theta: np.ndarray) -> TriMesh:
    """Apply blendshape weights then the pose chain; topology/uv unchanged."""
    psi = np.asarray(psi, dtype=float).reshape(-1)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if len(psi) != rig.num_shapes:
        raise GeometryError(f"psi has length {len(psi)}, expected {rig.num_shapes}")
    if len(theta) != rig.num_poses:
        raise GeometryError(f"theta has length {len(theta)}, expected {rig.num_poses}")
    verts = rig.rest.vertices.copy()
    if len(psi):
        verts = verts + np.tensordot(psi, rig.shape_deltas, axes=1)
    for p in range(rig.num_poses):
        if theta[p] == 0.0:
            continue
        R = axis_angle_rot(rig.pose_axes[p], theta[p])
        verts = verts @ R.T + theta[p] * rig.pose_translations[p]
    return TriMesh(verts, rig.rest.triangles, rig.rest.uv_coords)


@dataclass
class TriangleFrames:
    """Per-triangle local frames: centroid T, rotation R, mean edge length k."""

    T: np.ndarray  # (F, 3)
    R: np.ndarray  # (F, 3, 3)
    k: np.ndarray  # (F,)


def triangle_frames(mesh: TriMesh, prev: TriangleFrames | None = None) -> TriangleFrames:
    """Build local frames: e1 along the first edge, n the face normal, e2 = n × e1.

    Triangles degenerate after deformation reuse the previous frame's R with
    k clamped, if ``prev`` is given; otherwise they are an error.
    """
    corners = mesh.vertices[mesh.triangles]
    A, B, C = corners[:, 0], corners[:, 1], corners[:, 2]
    T = (A + B + C) / 3.0
    e1 = B - A
    e2 = C - B
    e3 = A - C
    lengths = np.stack(
        [np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1), np.linalg.norm(e3, axis=1)],
        axis=1,
    )
    k = lengths.mean(axis=1)
    n = np.cross(e1, C - A)
    n_norm = np.linalg.norm(n, axis=1)
    bad = (lengths.min(axis=1) <= DEGENERATE_EDGE) | (n_norm <= DEGENERATE_EDGE**2)
    if np.any(bad) and prev is None:
        raise GeometryError(f"degenerate triangle {np.nonzero(bad)[0][0]}")
    safe = ~bad
    R = np.empty((len(T), 3, 3))
    if np.any(safe):
        u = e1[safe] / lengths[safe, 0:1]
        nn = n[safe] / n_norm[safe, None]
        v = np.cross(nn, u)
        R[safe] = np.stack([u, v, nn], axis=2)  # columns e1, e2, n
    if np.any(bad):
        R[bad] = prev.R[bad]
        k = np.where(bad, np.maximum(k, DEGENERATE_EDGE), k)
        k = np.where(bad & (k <= DEGENERATE_EDGE), DEGENERATE_EDGE, k)
    return TriangleFrames(T=T, R=R, k=k)


@dataclass
class GaussianCloud:
    """Per-Gaussian local parameters plus triangle binding indices."""

    mu_l: np.ndarray  # (N, 3)
    log_s_l: np.ndarray  # (N, 3)
    r_l: np.ndarray  # (N, 4) unit quaternions
    tri_index: np.ndarray  # (N,) int

    def __post_init__(self):
        self.mu_l = np.asarray(self.mu_l, dtype=float)
        self.log_s_l = np.asarray(self.log_s_l, dtype=float)
        self.r_l = np.asarray(self.r_l, dtype=float)
        self.tri_index = np.asarray(self.tri_index, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.mu_l)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.mu_l.copy(), self.log_s_l.copy(), self.r_l.copy(), self.tri_index.copy()
        )


INIT_LOCAL_SCALE = 0.5  # exp(log_s_l) at initialization; below eps_scale=0.6


def init_cloud(mesh: TriMesh) -> GaussianCloud:
    """One Gaussian per triangle: centroid position, identity rotation."""
    F = mesh.num_triangles
    return GaussianCloud(
        mu_l=np.zeros((F, 3)),
        log_s_l=np.full((F, 3), np.log(INIT_LOCAL_SCALE)),
        r_l=quat_identity(F),
        tri_index=np.arange(F),
    )


@dataclass
class BindRecord:
    """Forward-pass state of bind_to_global needed by the adjoint."""

    R: np.ndarray  # (N, 3, 3) per-Gaussian frame rotations
    k: np.ndarray  # (N,)
    q_frame: np.ndarray  # (N, 4) quaternion of the frame rotation
    s: np.ndarray  # (N, 3) global scales
    r_raw: np.ndarray  # (N, 4) quaternion product before renormalization


def bind_to_global(
    cloud_mu_l: np.ndarray,
    cloud_log_s_l: np.ndarray,
    cloud_r_l: np.ndarray,
    tri_index: np.ndarray,
    frames: TriangleFrames,
):
    """Map local Gaussian parameters into world space.

    Returns (mu, s, r, record) with r renormalized unit quaternions.
    """
    if np.any(tri_index < 0) or np.any(tri_index >= len(frames.k)):
        raise GeometryError("tri_index out of range for the bound mesh")
    R = frames.R[tri_index]
    T = frames.T[tri_index]
    k = frames.k[tri_index]
    mu = k[:, None] * np.einsum("nij,nj->ni", R, cloud_mu_l) + T
    s = k[:, None] * np.exp(cloud_log_s_l)
    q_frame = rot_to_quat(R)
    r_raw = quat_mul(q_frame, cloud_r_l)
    r = quat_normalize(r_raw)
    record = BindRecord(R=R, k=k, q_frame=q_frame, s=s, r_raw=r_raw)
    return mu, s, r, record


def bind_backward(record: BindRecord, d_mu: np.ndarray, d_s: np.ndarray, d_r: np.ndarray):
    """Adjoint of bind_to_global: gradients for (mu_l, log_s_l, r_l)."""
    d_mu_l = record.k[:, None] * np.einsum("nji,nj->ni", record.R, d_mu)
    d_log_s_l = d_s * record.s
    d_r_raw = normalize_backward(record.r_raw, d_r)
    d_r_l = quat_mul_left_backward(record.q_frame, d_r_raw)
    return d_mu_l, d_log_s_l, d_r_l


def bind_cloud(cloud: GaussianCloud, frames: TriangleFrames):
    return bind_to_global(cloud.mu_l, cloud.log_s_l, cloud.r_l, cloud.tri_index, frames)
