"""Shared fixtures: small meshes, rigs, cameras, scene bundles."""

import numpy as np
import pytest

from uvsplat.camera import Camera, look_at
from uvsplat.geometry import TriMesh
from uvsplat.scene import atlas_uv, build_rig, icosphere


@pytest.fixture(scope="session")
def ico_mesh() -> TriMesh:
    verts, faces = icosphere(subdivisions=0)
    mesh = TriMesh(verts, faces, atlas_uv(len(faces)))
    mesh.validate()
    return mesh


@pytest.fixture(scope="session")
def rig():
    return build_rig(seed=0)


@pytest.fixture
def small_camera() -> Camera:
    R, t = look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3))
    return Camera(rotation=R, translation=t, fx=40.0, fy=40.0,
                  cx=16.0, cy=16.0, width=32, height=32)


def make_camera(width, height, eye=(0.0, 0.0, -3.0), focal_scale=1.3) -> Camera:
    R, t = look_at(np.asarray(eye, dtype=float), np.zeros(3))
    f = focal_scale * width
    return Camera(rotation=R, translation=t, fx=f, fy=f,
                  cx=width / 2.0, cy=height / 2.0, width=width, height=height)
