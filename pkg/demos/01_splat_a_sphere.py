"""Render mesh-bound Gaussians, from nothing to a first image.

Walks the forward path step by step: build a small sphere mesh, bind one
Gaussian to each triangle, paint them from a UV map, and splat to a PNG.
Run from the repo root:

    python3 demos/01_splat_a_sphere.py
"""

import pathlib

import numpy as np

from uvsplat.camera import Camera, look_at
from uvsplat.fusion import assemble_stage1
from uvsplat.geometry import TriMesh, init_cloud, triangle_frames
from uvsplat.meshio import save_png
from uvsplat.rasterizer import render
from uvsplat.scene import atlas_uv, icosphere
from uvsplat.uvfield import UVMap, local_uv_charts

out_dir = pathlib.Path("demo_out")
out_dir.mkdir(exist_ok=True)

# A subdivided icosahedron with a simple per-triangle UV atlas.
verts, faces = icosphere(subdivisions=2)
mesh = TriMesh(verts, faces, atlas_uv(len(faces)))
mesh.validate()
print(f"mesh: {len(verts)} vertices, {mesh.num_triangles} triangles")

# Each triangle gets a local frame (centroid, orientation, edge-length
# scale). Gaussians live in these frames, so they ride along when the
# mesh deforms. At init there is one Gaussian at each centroid.
frames = triangle_frames(mesh)
cloud = init_cloud(mesh)
print(f"cloud: {len(cloud)} Gaussians, one per triangle")

# Appearance comes from a UV map of logits (rgb + opacity). Fill it with
# a smooth color ramp; the sigmoid is applied during assembly.
W = 64
u = (np.arange(W) + 0.5) / W
B = np.zeros((W, W, 4))
B[:, :, 0] = 3.0 * u[None, :] - 1.5          # red ramps left to right
B[:, :, 1] = 3.0 * u[:, None] - 1.5          # green ramps top to bottom
B[:, :, 2] = -1.0
B[:, :, 3] = 4.0                              # mostly opaque
charts = local_uv_charts(mesh, frames)

# assemble_stage1 samples the map at each Gaussian's UV position and
# binds local geometry into world space.
gaussians, _ = assemble_stage1(cloud, frames, charts, UVMap(B))
print(f"opacities span [{gaussians.o.min():.3f}, {gaussians.o.max():.3f}]")

R, t = look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3))
cam = Camera(rotation=R, translation=t, fx=160.0, fy=160.0,
             cx=64.0, cy=64.0, width=128, height=128)
img, _ = render(gaussians, cam, background=np.array([0.05, 0.05, 0.08]))
save_png(out_dir / "sphere.png", img)
print(f"wrote {out_dir / 'sphere.png'} "
      f"(mean pixel {img.mean():.3f}, max {img.max():.3f})")
