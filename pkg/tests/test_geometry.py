"""Mesh deformation, triangle frames, and local-to-world Gaussian binding."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from uvsplat.geometry import (
    DEGENERATE_EDGE,
    GeometryError,
    GaussianCloud,
    INIT_LOCAL_SCALE,
    TriMesh,
    bind_cloud,
    bind_to_global,
    deform,
    init_cloud,
    triangle_frames,
)
from uvsplat.quaternions import quat_normalize, quat_to_rot

RNG = np.random.default_rng(11)


def test_mesh_validate_rejects_bad_indices():
    verts = np.eye(3)
    with pytest.raises(GeometryError):
        TriMesh(verts, [[0, 1, 5]], np.zeros((1, 3, 2))).validate()


def test_mesh_validate_rejects_degenerate():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 0, 0]])
    with pytest.raises(GeometryError):
        TriMesh(verts, [[0, 1, 2]], np.zeros((1, 3, 2))).validate()


def test_deform_rest_is_identity(rig):
    mesh = deform(rig, np.zeros(rig.num_shapes), np.zeros(rig.num_poses))
    assert np.array_equal(mesh.vertices, rig.rest.vertices)
    assert np.array_equal(mesh.triangles, rig.rest.triangles)


def test_deform_linear_in_psi(rig):
    psi = RNG.standard_normal(rig.num_shapes)
    m1 = deform(rig, psi, np.zeros(rig.num_poses))
    expected = rig.rest.vertices + np.tensordot(psi, rig.shape_deltas, axes=1)
    assert np.allclose(m1.vertices, expected)


def test_deform_pose_is_rigid(rig):
    theta = 0.3 * RNG.standard_normal(rig.num_poses)
    m = deform(rig, np.zeros(rig.num_shapes), theta)
    # pairwise distances preserved by the pose chain (rotations + translations)
    a, b = rig.rest.vertices[:10], m.vertices[:10]
    da = np.linalg.norm(a[:, None] - a[None, :], axis=2)
    db = np.linalg.norm(b[:, None] - b[None, :], axis=2)
    assert np.allclose(da, db, atol=1e-12)


def test_frames_orthonormal(ico_mesh):
    fr = triangle_frames(ico_mesh)
    prod = np.einsum("fij,fkj->fik", fr.R, fr.R)
    assert np.allclose(prod, np.eye(3)[None], atol=1e-12)
    assert np.all(np.linalg.det(fr.R) > 0.99)


def test_frames_definition(ico_mesh):
    fr = triangle_frames(ico_mesh)
    corners = ico_mesh.vertices[ico_mesh.triangles]
    # T is the centroid, k the mean edge length, column 0 along the first edge
    assert np.allclose(fr.T, corners.mean(axis=1))
    e1 = corners[:, 1] - corners[:, 0]
    lengths = [
        np.linalg.norm(corners[:, 1] - corners[:, 0], axis=1),
        np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1),
        np.linalg.norm(corners[:, 0] - corners[:, 2], axis=1),
    ]
    assert np.allclose(fr.k, np.mean(lengths, axis=0))
    assert np.allclose(fr.R[:, :, 0], e1 / np.linalg.norm(e1, axis=1, keepdims=True))
    # column 2 is the face normal
    n = np.cross(e1, corners[:, 2] - corners[:, 0])
    assert np.allclose(fr.R[:, :, 2], n / np.linalg.norm(n, axis=1, keepdims=True))


def test_degenerate_frame_reuses_previous(ico_mesh):
    fr0 = triangle_frames(ico_mesh)
    verts = ico_mesh.vertices.copy()
    tri0 = ico_mesh.triangles[0]
    verts[tri0[1]] = verts[tri0[0]]  # collapse first edge
    bad = TriMesh(verts, ico_mesh.triangles, ico_mesh.uv_coords)
    with pytest.raises(GeometryError):
        triangle_frames(bad)
    fr = triangle_frames(bad, prev=fr0)
    assert np.array_equal(fr.R[0], fr0.R[0])
    assert fr.k[0] >= DEGENERATE_EDGE


def test_init_cloud(ico_mesh):
    cloud = init_cloud(ico_mesh)
    assert len(cloud) == ico_mesh.num_triangles
    assert np.all(cloud.mu_l == 0.0)
    assert np.allclose(np.exp(cloud.log_s_l), INIT_LOCAL_SCALE)
    assert np.allclose(cloud.r_l[:, 0], 1.0)
    assert np.array_equal(cloud.tri_index, np.arange(ico_mesh.num_triangles))


def test_bind_centroid_scale(ico_mesh):
    """mu_l = 0 binds to the centroid; s = k * exp(log_s_l)."""
    fr = triangle_frames(ico_mesh)
    cloud = init_cloud(ico_mesh)
    mu, s, r, _ = bind_cloud(cloud, fr)
    assert np.allclose(mu, fr.T)
    assert np.allclose(s, fr.k[:, None] * INIT_LOCAL_SCALE)
    # identity local rotation binds to the frame rotation itself
    assert np.allclose(quat_to_rot(r), fr.R, atol=1e-12)


def test_bind_offset_along_frame(ico_mesh):
    fr = triangle_frames(ico_mesh)
    n = ico_mesh.num_triangles
    mu_l = np.tile([1.0, 0.0, 0.0], (n, 1))
    mu, _, _, _ = bind_to_global(
        mu_l, np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1)),
        np.arange(n), fr,
    )
    # one unit along local x = k * e1 away from the centroid
    assert np.allclose(mu, fr.T + fr.k[:, None] * fr.R[:, :, 0])


def test_bind_rotation_composition(ico_mesh):
    fr = triangle_frames(ico_mesh)
    n = ico_mesh.num_triangles
    r_l = quat_normalize(RNG.standard_normal((n, 4)))
    _, _, r, _ = bind_to_global(
        np.zeros((n, 3)), np.zeros((n, 3)), r_l, np.arange(n), fr
    )
    R_global = quat_to_rot(r)
    R_expected = np.einsum("fij,fjk->fik", fr.R, quat_to_rot(r_l))
    assert np.allclose(R_global, R_expected, atol=1e-9)


def test_bind_rejects_bad_index(ico_mesh):
    fr = triangle_frames(ico_mesh)
    with pytest.raises(GeometryError):
        bind_to_global(
            np.zeros((1, 3)), np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]),
            np.array([ico_mesh.num_triangles]), fr,
        )


def _rigid_motion(rng):
    R = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    t = rng.uniform(-5, 5, size=3)
    return R, t


def test_binding_equivariance_small(ico_mesh):
    """Rigid motion of the mesh moves bound Gaussians by the same motion."""
    rng = np.random.default_rng(3)
    cloud = init_cloud(ico_mesh)
    cloud.mu_l += 0.2 * rng.standard_normal(cloud.mu_l.shape)
    fr = triangle_frames(ico_mesh)
    mu0, s0, r0, _ = bind_cloud(cloud, fr)
    for _ in range(20):
        Rm, t = _rigid_motion(rng)
        moved = TriMesh(ico_mesh.vertices @ Rm.T + t, ico_mesh.triangles,
                        ico_mesh.uv_coords)
        mu1, s1, r1, _ = bind_cloud(cloud, triangle_frames(moved))
        assert np.allclose(mu1, mu0 @ Rm.T + t, atol=1e-9)
        assert np.allclose(quat_to_rot(r1), np.einsum("ij,njk->nik", Rm,
                                                      quat_to_rot(r0)), atol=1e-9)
        # scales depend only on edge lengths, invariant up to rounding
        assert np.allclose(s1, s0, rtol=1e-12, atol=0)
