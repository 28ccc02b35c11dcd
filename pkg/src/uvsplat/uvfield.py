"""UV atlas machinery: bilinear sampling with gradients, texel tables,
normal-map baking, and the local-position -> uv chart mapping.

Texel centers sit at ((i + 0.5) / W, (j + 0.5) / H); sampling clamps to the
edge (charts do not tile). The spatial derivative of a sample is taken
right-sided on texel-center grid lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .geometry import TriangleFrames, TriMesh


class UVError(ValueError):
    pass


@dataclass
class UVMap:
    """W x H x C grid of scalar features; data stored as (H, W, C)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise UVError("UVMap data must be (H, W, C)")
        if self.data.shape[0] < 2 or self.data.shape[1] < 2:
            raise UVError("UVMap needs at least 2x2 texels")
        if not np.all(np.isfinite(self.data)):
            raise UVError("UVMap data must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, width: int, height: int, channels: int) -> "UVMap":
        return cls(np.zeros((height, width, channels)))


@dataclass
class SampleRecord:
    shape: tuple
    i0: np.ndarray
    j0: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    corners: np.ndarray  # (N, 4, C) values at (00, 10, 01, 11)
    du_mask: np.ndarray
    dv_mask: np.ndarray


def _axis_coords(u: np.ndarray, n: int):
    xf = np.clip(u * n - 0.5, 0.0, float(n - 1))
    i0 = np.minimum(np.floor(xf), n - 2).astype(np.int64)
    frac = xf - i0
    # derivative exists (right-sided) while the pre-clip coordinate is in range
    mask = (u * n - 0.5 >= 0.0) & (u * n - 0.5 < n - 1)
    return i0, frac, mask


def sample(uvmap: UVMap, p: np.ndarray):
    """Bilinear sample at uv points p of shape (N, 2); returns (values, record)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if not np.all(np.isfinite(p)):
        raise UVError("non-finite uv coordinates")
    data = uvmap.data
    H, W, _ = data.shape
    i0, fx, du_mask = _axis_coords(p[:, 0], W)
    j0, fy, dv_mask = _axis_coords(p[:, 1], H)
    c00 = data[j0, i0]
    c10 = data[j0, i0 + 1]
    c01 = data[j0 + 1, i0]
    c11 = data[j0 + 1, i0 + 1]
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    vals = (
        w00[:, None] * c00 + w10[:, None] * c10 + w01[:, None] * c01 + w11[:, None] * c11
    )
    rec = SampleRecord(
        shape=data.shape,
        i0=i0,
        j0=j0,
        fx=fx,
        fy=fy,
        corners=np.stack([c00, c10, c01, c11], axis=1),
        du_mask=du_mask,
        dv_mask=dv_mask,
    )
    return vals, rec


def sample_backward(rec: SampleRecord, d_out: np.ndarray):
    """Adjoint of sample: (d_map, d_p)."""
    d_out = np.asarray(d_out, dtype=float)
    H, W, C = rec.shape
    fx, fy = rec.fx, rec.fy
    d_map = np.zeros((H, W, C))
    np.add.at(d_map, (rec.j0, rec.i0), ((1 - fx) * (1 - fy))[:, None] * d_out)
    np.add.at(d_map, (rec.j0, rec.i0 + 1), (fx * (1 - fy))[:, None] * d_out)
    np.add.at(d_map, (rec.j0 + 1, rec.i0), ((1 - fx) * fy)[:, None] * d_out)
    np.add.at(d_map, (rec.j0 + 1, rec.i0 + 1), (fx * fy)[:, None] * d_out)

    c00, c10, c01, c11 = (rec.corners[:, i] for i in range(4))
    dval_du = W * ((1 - fy)[:, None] * (c10 - c00) + fy[:, None] * (c11 - c01))
    dval_dv = H * ((1 - fx)[:, None] * (c01 - c00) + fx[:, None] * (c11 - c10))
    d_u = np.sum(dval_du * d_out, axis=1) * rec.du_mask
    d_v = np.sum(dval_dv * d_out, axis=1) * rec.dv_mask
    return d_map, np.stack([d_u, d_v], axis=1)


def upsample_bilinear(coarse: np.ndarray, width: int, height: int):
    """Evaluate a coarse (G, G, C) grid at fine texel centers.

    Returns (fine_data, record); the record feeds upsample_backward.
    """
    coarse = np.asarray(coarse, dtype=float)
    if coarse.shape[0] == 1 and coarse.shape[1] == 1:
        fine = np.broadcast_to(coarse[0, 0], (height, width, coarse.shape[2])).copy()
        return fine, ("const", coarse.shape, width, height)
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v)
    p = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    vals, rec = sample(UVMap(coarse), p)
    return vals.reshape(height, width, coarse.shape[2]), rec


def upsample_backward(rec, d_fine: np.ndarray) -> np.ndarray:
    """Gradient of upsample_bilinear w.r.t. the coarse grid."""
    if isinstance(rec, tuple) and rec[0] == "const":
        _, shape, _, _ = rec
        d = np.zeros(shape)
        d[0, 0] = d_fine.sum(axis=(0, 1))
        return d
    C = d_fine.shape[2]
    d_coarse, _ = sample_backward(rec, d_fine.reshape(-1, C))
    return d_coarse


# ---------------------------------------------------------------------------
# texel table + normal baking


@dataclass
class TexelTable:
    """Per-texel covering triangle (-1 if uncovered) and barycentrics."""

    tri: np.ndarray  # (H, W) int
    bary: np.ndarray  # (H, W, 3)

    @property
    def coverage(self) -> float:
        return float(np.mean(self.tri >= 0))


def build_texel_table(mesh: TriMesh, out_size) -> TexelTable:
    """Rasterize the uv charts onto a texel grid; charts must not overlap."""
    W, H = (out_size, out_size) if np.isscalar(out_size) else out_size
    tri_map = np.full((H, W), -1, dtype=np.int64)
    bary_map = np.zeros((H, W, 3))
    strict = np.zeros((H, W), dtype=bool)
    eps = 1e-9
    for f in range(mesh.num_triangles):
        q = mesh.uv_coords[f]  # (3, 2)
        d1 = q[1] - q[0]
        d2 = q[2] - q[0]
        det = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(det) < 1e-15:
            continue
        lo = np.maximum(np.floor(q.min(axis=0) * [W, H] - 0.5).astype(int), 0)
        hi = np.minimum(np.ceil(q.max(axis=0) * [W, H] - 0.5).astype(int) + 1, [W, H])
        if np.any(hi <= lo):
            continue
        xs = (np.arange(lo[0], hi[0]) + 0.5) / W
        ys = (np.arange(lo[1], hi[1]) + 0.5) / H
        uu, vv = np.meshgrid(xs, ys)
        rx = uu - q[0, 0]
        ry = vv - q[0, 1]
        wb = (rx * d2[1] - ry * d2[0]) / det
        wc = (d1[0] * ry - d1[1] * rx) / det
        wa = 1.0 - wb - wc
        inside = (wa >= -eps) & (wb >= -eps) & (wc >= -eps)
        interior = (wa > eps) & (wb > eps) & (wc > eps)
        jj, ii = np.nonzero(inside)
        for j, i in zip(jj, ii):
            y, x = lo[1] + j, lo[0] + i
            if tri_map[y, x] >= 0:
                if strict[y, x] and interior[j, i]:
                    raise UVError(f"overlapping uv charts at texel ({x}, {y})")
                continue  # first triangle wins
            tri_map[y, x] = f
            bary_map[y, x] = (wa[j, i], wb[j, i], wc[j, i])
            strict[y, x] = interior[j, i]
    return TexelTable(tri=tri_map, bary=bary_map)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals of the (possibly deformed) mesh."""
    corners = mesh.vertices[mesh.triangles]
    fn = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    vn = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(vn, mesh.triangles[:, c], fn)
    norms = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.maximum(norms, 1e-30)


def bake_normal_map(mesh: TriMesh, camera: Camera, table: TexelTable) -> UVMap:
    """Bake camera-oriented surface normals into UV space.

    Covered texels hold the barycentric blend of camera-space vertex
    normals (z flipped so camera-facing surfaces bake to +z), renormalized.
    Uncovered texels are zero.
    """
    vn = vertex_normals(mesh)
    n_cam = vn @ camera.rotation.T
    n_cam[:, 2] *= -1.0  # +z toward the camera
    H, W = table.tri.shape
    out = np.zeros((H, W, 3))
    jj, ii = np.nonzero(table.tri >= 0)
    if jj.size:
        tris = table.tri[jj, ii]
        corner_idx = mesh.triangles[tris]  # (M, 3)
        b = table.bary[jj, ii]  # (M, 3)
        n = np.einsum("mc,mci->mi", b, n_cam[corner_idx])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
        out[jj, ii] = n
    return UVMap(out)


# ---------------------------------------------------------------------------
# local position -> uv


@dataclass
class UVCharts:
    """Per-triangle affine map uv(mu_l) = uv0 + J @ mu_l[:2] (pre-clamp)."""

    uv0: np.ndarray  # (F, 2)
    J: np.ndarray  # (F, 2, 2)


def local_uv_charts(mesh: TriMesh, frames: TriangleFrames) -> UVCharts:
    """Affine uv maps from the local e1-e2 plane into each triangle's chart."""
    corners = mesh.vertices[mesh.triangles]  # (F, 3, 3)
    rel = corners - frames.T[:, None, :]
    local = np.einsum("fji,fcj->fci", frames.R, rel) / frames.k[:, None, None]
    a = local[:, 0, :2]
    M = np.stack([local[:, 1, :2] - a, local[:, 2, :2] - a], axis=2)  # (F,2,2) cols b-a, c-a
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    if np.any(np.abs(det) < 1e-18):
        raise UVError(f"degenerate uv chart for triangle {int(np.argmin(np.abs(det)))}")
    Minv = np.empty_like(M)
    Minv[:, 0, 0] = M[:, 1, 1] / det
    Minv[:, 0, 1] = -M[:, 0, 1] / det
    Minv[:, 1, 0] = -M[:, 1, 0] / det
    Minv[:, 1, 1] = M[:, 0, 0] / det
    uvc = mesh.uv_coords  # (F, 3, 2)
    E = np.stack([uvc[:, 1] - uvc[:, 0], uvc[:, 2] - uvc[:, 0]], axis=2)  # (F,2,2)
    J = np.einsum("fij,fjk->fik", E, Minv)
    uv0 = uvc[:, 0] - np.einsum("fij,fj->fi", J, a)
    return UVCharts(uv0=uv0, J=J)


@dataclass
class UVRecord:
    J: np.ndarray  # (N, 2, 2) chart Jacobians gathered per Gaussian
    clamp_mask: np.ndarray  # (N, 2) derivative mask from the [0,1] clamp


def uv_for_cloud(mu_l: np.ndarray, tri_index: np.ndarray, charts: UVCharts):
    """Map local positions to clamped uv coordinates; returns (p, record)."""
    J = charts.J[tri_index]
    raw = charts.uv0[tri_index] + np.einsum("nij,nj->ni", J, mu_l[:, :2])
    p = np.clip(raw, 0.0, 1.0)
    mask = (raw >= 0.0) & (raw <= 1.0)
    return p, UVRecord(J=J, clamp_mask=mask)


def uv_for_cloud_backward(rec: UVRecord, d_p: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. mu_l (z component is zero by construction)."""
    d_uv = d_p * rec.clamp_mask
    d_xy = np.einsum("nji,nj->ni", rec.J, d_uv)
    out = np.zeros((len(d_xy), 3))
    out[:, :2] = d_xy
    return out


def uv_of_local(mu_l, tri: int, mesh: TriMesh, frames: TriangleFrames) -> np.ndarray:
    """Single-point convenience wrapper around uv_for_cloud."""
    charts = local_uv_charts(mesh, frames)
    p, _ = uv_for_cloud(np.asarray(mu_l, dtype=float)[None, :], np.array([tri]), charts)
    return p[0]
