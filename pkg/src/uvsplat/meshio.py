"""OBJ mesh import/export (v/vt/f with one vt per face corner) and PNG I/O."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .checkpoint import atomic_write_bytes, atomic_write_text
from .geometry import TriMesh


def save_obj(path, mesh: TriMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for f in range(mesh.num_triangles):
        for c in range(3):
            u, w = mesh.uv_coords[f, c]
            lines.append(f"vt {u:.17g} {w:.17g}")
    for f in range(mesh.num_triangles):
        vi = mesh.triangles[f] + 1
        ti = 3 * f + np.array([1, 2, 3])
        lines.append(f"f {vi[0]}/{ti[0]} {vi[1]}/{ti[1]} {vi[2]}/{ti[2]}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    verts, uvs, faces, face_uvs = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                vi, ti = [], []
                for token in parts[1:4]:
                    bits = token.split("/")
                    vi.append(int(bits[0]) - 1)
                    ti.append(int(bits[1]) - 1 if len(bits) > 1 and bits[1] else -1)
                faces.append(vi)
                face_uvs.append(ti)
    uvs = np.asarray(uvs, dtype=float)
    uv_coords = np.zeros((len(faces), 3, 2))
    for f, ti in enumerate(face_uvs):
        for c, t in enumerate(ti):
            if t >= 0:
                uv_coords[f, c] = uvs[t]
    return TriMesh(np.asarray(verts, dtype=float), np.asarray(faces), uv_coords)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    """Write a float image (H, W, C) clamped to [0, 1] as 8-bit PNG."""
    arr = to_uint8(np.asarray(img))
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] > 3:
        arr = arr[:, :, :3]
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=float) / 255.0
