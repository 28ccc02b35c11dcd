"""Synthetic blendshape scenes: a UV-unwrapped icosphere rig driven by two
sinusoidal blendshapes and three rotation poses, with ground truth rendered
by this package's own rasterizer from per-triangle oracle Gaussians.

The oracle colors follow base_texture + wrinkle_texture * g(psi) with
g(psi) = max(0, psi_1 * psi_2) on the "nonlinear" preset and g == 0 on
"static" and "linear". The last 30% of frames form the test split.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .camera import Camera, look_at
from .checkpoint import atomic_write_bytes, atomic_write_text, read_tensors, write_tensors
from .fields import ConditionVector
from .fusion import GlobalGaussians
from .geometry import BlendshapeRig, TriMesh, bind_cloud, deform, init_cloud, triangle_frames
from .meshio import load_obj, save_obj, save_png
from .rasterizer import render

PRESETS = ("static", "linear", "nonlinear")
ORACLE_OPACITY = 0.9
WRINKLE_AMPLITUDE = 0.45


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry of the rig


def icosphere(subdivisions: int = 1, radius: float = 0.8):
    """Subdivided icosahedron; returns (vertices, faces)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        edge_mid = {}
        verts = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts)
                verts.append(m)
            return edge_mid[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        faces = np.asarray(new_faces, dtype=np.int64)
        verts = np.asarray(verts)
    return verts * radius, faces


def atlas_uv(num_faces: int, margin: float = 0.06) -> np.ndarray:
    """Per-face uv charts: two inset triangles per grid cell, no overlap."""
    cells = (num_faces + 1) // 2
    n = int(np.ceil(np.sqrt(cells)))
    uv = np.zeros((num_faces, 3, 2))
    lower = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    upper = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    for f in range(num_faces):
        cell = f // 2
        cx, cy = cell % n, cell // n
        tri = lower if f % 2 == 0 else upper
        center = tri.mean(axis=0)
        tri = center + (tri - center) * (1.0 - 2.0 * margin)
        uv[f] = (np.array([cx, cy]) + tri) / n
    return uv


def build_rig(seed: int = 0, subdivisions: int = 1) -> BlendshapeRig:
    """Icosphere rig with K=2 sinusoidal radial blendshapes, P=3 pose axes."""
    verts, faces = icosphere(subdivisions)
    mesh = TriMesh(verts, faces, atlas_uv(len(faces)))
    mesh.validate()
    rng = np.random.default_rng(seed)
    radial = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    deltas = np.zeros((2, len(verts), 3))
    for k in range(2):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0, 2 * np.pi)
        amp = 0.06 * np.sin(3.0 * (verts @ direction) + phase)
        deltas[k] = amp[:, None] * radial
    axes = np.eye(3)
    return BlendshapeRig(rest=mesh, shape_deltas=deltas, pose_axes=axes)


# ---------------------------------------------------------------------------
# oracle appearance


def oracle_textures(rig: BlendshapeRig, seed: int):
    """Per-triangle base colors and wrinkle color deltas."""
    rng = np.random.default_rng(seed + 1)
    mesh = rig.rest
    F = mesh.num_triangles
    base = rng.uniform(0.15, 0.85, size=(F, 3))
    corners = mesh.vertices[mesh.triangles]
    fn = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    fn /= np.linalg.norm(fn, axis=1, keepdims=True)
    d = np.array([0.3, 0.4, -0.87])
    d /= np.linalg.norm(d)
    strength = np.maximum(fn @ d, 0.0) ** 2
    wrinkle = WRINKLE_AMPLITUDE * strength[:, None] * np.array([0.9, 0.5, 0.2])
    return base, wrinkle


def wrinkle_gate(psi: np.ndarray, preset: str) -> float:
    if preset != "nonlinear":
        return 0.0
    return float(max(0.0, psi[0] * psi[1]))


def oracle_colors(base, wrinkle, psi, preset: str):
    g = wrinkle_gate(psi, preset)
    return np.clip(base + g * wrinkle, 0.05, 0.95)


# ---------------------------------------------------------------------------
# bundle


@dataclass
class SceneBundle:
    preset: str
    seed: int
    rig: BlendshapeRig
    psi: np.ndarray  # (F, K)
    theta: np.ndarray  # (F, P)
    cameras: list
    gt_images: np.ndarray  # (F, H, W, 3)
    background: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.psi)

    def cond(self, i: int) -> ConditionVector:
        return ConditionVector(psi=self.psi[i], theta=self.theta[i])


def _default_camera(width: int, height: int) -> Camera:
    R, t = look_at(eye=(0.0, 0.0, -3.0), target=(0.0, 0.0, 0.0))
    f = 1.3 * width
    return Camera(rotation=R, translation=t, fx=f, fy=f,
                  cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def _frame_conditions(preset: str, n: int):
    t = np.arange(n) / n
    if preset == "static":
        return np.zeros((n, 2)), np.zeros((n, 3))
    psi = np.stack([np.cos(2 * np.pi * t), np.cos(4 * np.pi * t)], axis=1)
    if preset == "linear":
        psi = 0.5 * np.stack(
            [np.sin(2 * np.pi * t), np.sin(2 * np.pi * t + 1.3)], axis=1
        )
    theta = 0.1 * np.stack(
        [np.sin(2 * np.pi * t + p) for p in (0.0, 2.1, 4.2)], axis=1
    )
    return psi, theta


def gen_scene(
    preset: str,
    seed: int,
    out_dir,
    image_size: int = 64,
    n_frames: int | None = None,
    background=(0.0, 0.0, 0.0),
) -> SceneBundle:
    """Build a synthetic scene bundle and write it to out_dir."""
    if preset not in PRESETS:
        raise SceneError(f"unknown preset '{preset}' (choose from {PRESETS})")
    if n_frames is None:
        n_frames = 20 if preset == "static" else 40
    if n_frames < 10:
        raise SceneError("a scene needs at least 10 frames")
    rig = build_rig(seed)
    base, wrinkle = oracle_textures(rig, seed)
    psi, theta = _frame_conditions(preset, n_frames)
    cam = _default_camera(image_size, image_size)
    background = np.asarray(background, dtype=float)

    cloud = init_cloud(rig.rest)
    gt = np.empty((n_frames, image_size, image_size, 3))
    for i in range(n_frames):
        mesh_i = deform(rig, psi[i], theta[i])
        frames_i = triangle_frames(mesh_i)
        mu, s, r, _ = bind_cloud(cloud, frames_i)
        colors = oracle_colors(base, wrinkle, psi[i], preset)
        g = GlobalGaussians(
            c=colors, o=np.full(len(cloud), ORACLE_OPACITY), mu=mu, s=s, r=r
        )
        gt[i], _ = render(g, cam, background)

    n_test = max(1, int(round(0.3 * n_frames)))
    train_idx = np.arange(n_frames - n_test)
    test_idx = np.arange(n_frames - n_test, n_frames)
    bundle = SceneBundle(
        preset=preset, seed=seed, rig=rig, psi=psi, theta=theta,
        cameras=[cam] * n_frames, gt_images=gt, background=background,
        train_idx=train_idx, test_idx=test_idx,
    )
    save_bundle(out_dir, bundle)
    return bundle


def save_bundle(out_dir, bundle: SceneBundle) -> None:
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "gt"), exist_ok=True)
    H, W = bundle.gt_images.shape[1:3]
    meta = {
        "preset": bundle.preset,
        "seed": bundle.seed,
        "n_frames": bundle.n_frames,
        "image_width": W,
        "image_height": H,
        "background": list(bundle.background),
        "train": bundle.train_idx.tolist(),
        "test": bundle.test_idx.tolist(),
    }
    atomic_write_text(os.path.join(out_dir, "scene.json"),
                      json.dumps(meta, indent=2, sort_keys=True))
    save_obj(os.path.join(out_dir, "mesh.obj"), bundle.rig.rest)
    write_tensors(
        os.path.join(out_dir, "rig.bin"),
        {
            "shape_deltas": bundle.rig.shape_deltas,
            "pose_axes": bundle.rig.pose_axes,
            "pose_translations": bundle.rig.pose_translations,
        },
    )
    write_tensors(
        os.path.join(out_dir, "frames.bin"),
        {
            "psi": bundle.psi,
            "theta": bundle.theta,
            "cameras": np.stack([c.flat() for c in bundle.cameras]),
        },
    )
    for i in range(bundle.n_frames):
        img = bundle.gt_images[i]
        save_png(os.path.join(out_dir, "gt", f"frame_{i:03d}.png"), img)
        atomic_write_bytes(
            os.path.join(out_dir, "gt", f"frame_{i:03d}.raw"),
            np.ascontiguousarray(img, dtype="<f8").tobytes(),
        )


def load_bundle(path) -> SceneBundle:
    with open(os.path.join(path, "scene.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    mesh = load_obj(os.path.join(path, "mesh.obj"))
    rig_t = read_tensors(os.path.join(path, "rig.bin"))
    rig = BlendshapeRig(
        rest=mesh,
        shape_deltas=rig_t["shape_deltas"],
        pose_axes=rig_t["pose_axes"],
        pose_translations=rig_t["pose_translations"],
    )
    fr = read_tensors(os.path.join(path, "frames.bin"))
    W, H = meta["image_width"], meta["image_height"]
    cams = [Camera.from_flat(v, W, H) for v in fr["cameras"]]
    n = meta["n_frames"]
    gt = np.empty((n, H, W, 3))
    for i in range(n):
        raw = os.path.join(path, "gt", f"frame_{i:03d}.raw")
        gt[i] = np.fromfile(raw, dtype="<f8").reshape(H, W, 3)
    return SceneBundle(
        preset=meta["preset"], seed=meta["seed"], rig=rig,
        psi=fr["psi"], theta=fr["theta"], cameras=cams, gt_images=gt,
        background=np.asarray(meta["background"], dtype=float),
        train_idx=np.asarray(meta["train"], dtype=np.int64),
        test_idx=np.asarray(meta["test"], dtype=np.int64),
    )
