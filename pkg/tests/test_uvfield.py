"""Bilinear UV sampling against a brute-force oracle, texel tables, baking."""

import numpy as np
import pytest

from uvsplat.geometry import TriMesh, triangle_frames
from uvsplat.uvfield import (
    UVError,
    UVMap,
    build_texel_table,
    bake_normal_map,
    local_uv_charts,
    sample,
    sample_backward,
    upsample_backward,
    upsample_bilinear,
    uv_for_cloud,
    uv_of_local,
    vertex_normals,
)

RNG = np.random.default_rng(23)


def oracle_sample(data, u, v):
    """Independent scalar bilinear lookup with clamp-to-edge semantics."""
    H, W, C = data.shape
    x = min(max(u * W - 0.5, 0.0), W - 1.0)
    y = min(max(v * H - 0.5, 0.0), H - 1.0)
    i0 = min(int(np.floor(x)), W - 2)
    j0 = min(int(np.floor(y)), H - 2)
    fx, fy = x - i0, y - j0
    out = np.zeros(C)
    for c in range(C):
        out[c] = (
            (1 - fx) * (1 - fy) * data[j0, i0, c]
            + fx * (1 - fy) * data[j0, i0 + 1, c]
            + (1 - fx) * fy * data[j0 + 1, i0, c]
            + fx * fy * data[j0 + 1, i0 + 1, c]
        )
    return out


def test_sample_matches_oracle():
    data = RNG.standard_normal((6, 9, 4))
    m = UVMap(data)
    pts = np.vstack([
        RNG.uniform(-0.2, 1.2, size=(40, 2)),  # includes out-of-range (clamped)
        np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]),
    ])
    vals, _ = sample(m, pts)
    for i, (u, v) in enumerate(pts):
        assert np.allclose(vals[i], oracle_sample(data, u, v), atol=1e-12)


def test_sample_texel_centers_exact():
    data = RNG.standard_normal((4, 5, 2))
    m = UVMap(data)
    for j in range(4):
        for i in range(5):
            p = np.array([(i + 0.5) / 5, (j + 0.5) / 4])
            vals, _ = sample(m, p)
            assert np.allclose(vals[0], data[j, i], atol=1e-14)


def test_sample_2x2_midpoint():
    """Center of a 2x2 map is the mean of the four texels."""
    data = np.arange(8, dtype=float).reshape(2, 2, 2)
    vals, _ = sample(UVMap(data), np.array([0.5, 0.5]))
    assert np.allclose(vals[0], data.reshape(4, 2).mean(axis=0))


def test_sample_rejects_nonfinite():
    m = UVMap(np.zeros((2, 2, 1)))
    with pytest.raises(UVError):
        sample(m, np.array([[np.nan, 0.5]]))


def test_sample_backward_map_adjoint_dot():
    """<d_out, sample(map)> == <d_map, map> (linearity in the map)."""
    data = RNG.standard_normal((5, 5, 3))
    p = RNG.uniform(0, 1, size=(12, 2))
    d_out = RNG.standard_normal((12, 3))
    vals, rec = sample(UVMap(data), p)
    d_map, _ = sample_backward(rec, d_out)
    assert np.isclose((vals * d_out).sum(), (d_map * data).sum(), atol=1e-10)


def test_sample_grad_right_sided_on_grid_line():
    """On a texel-center line the derivative uses the right-hand cell."""
    data = np.zeros((2, 3, 1))
    data[:, :, 0] = [[0.0, 1.0, 5.0], [0.0, 1.0, 5.0]]
    m = UVMap(data)
    u_line = 1.5 / 3.0  # texel center of column 1
    _, rec = sample(m, np.array([[u_line, 0.5]]))
    _, d_p = sample_backward(rec, np.ones((1, 1)))
    # right-sided slope: (5 - 1) per texel * W texels per uv unit
    assert np.isclose(d_p[0, 0], (5.0 - 1.0) * 3.0)


def test_sample_grad_zero_outside_range():
    data = RNG.standard_normal((4, 4, 1))
    m = UVMap(data)
    _, rec = sample(m, np.array([[-0.5, 0.5], [0.5, 1.4]]))
    _, d_p = sample_backward(rec, np.ones((2, 1)))
    assert d_p[0, 0] == 0.0  # clamped in u
    assert d_p[1, 1] == 0.0  # clamped in v


def test_upsample_reproduces_bilinear_nodes():
    """A globally bilinear coarse map is reproduced exactly at interior
    fine texel centers (where no clamping is involved)."""
    G, Wf, Hf = 4, 16, 16
    u_c = (np.arange(G) + 0.5) / G
    v_c = (np.arange(G) + 0.5) / G
    uu, vv = np.meshgrid(u_c, v_c)
    coarse = (2.0 * uu + 3.0 * vv - 1.0)[:, :, None]
    fine, _ = upsample_bilinear(coarse, Wf, Hf)
    u_f = (np.arange(Wf) + 0.5) / Wf
    v_f = (np.arange(Hf) + 0.5) / Hf
    interior_u = (u_f >= u_c[0]) & (u_f <= u_c[-1])
    interior_v = (v_f >= v_c[0]) & (v_f <= v_c[-1])
    uu_f, vv_f = np.meshgrid(u_f[interior_u], v_f[interior_v])
    expected = 2.0 * uu_f + 3.0 * vv_f - 1.0
    got = fine[np.ix_(interior_v, interior_u, [0])][:, :, 0]
    assert np.allclose(got, expected, atol=1e-12)


def test_upsample_const_grid():
    coarse = np.full((1, 1, 3), 2.5)
    fine, rec = upsample_bilinear(coarse, 8, 6)
    assert fine.shape == (6, 8, 3)
    assert np.all(fine == 2.5)
    d = upsample_backward(rec, np.ones((6, 8, 3)))
    assert np.allclose(d[0, 0], 48.0)


def test_upsample_backward_adjoint_dot():
    coarse = RNG.standard_normal((3, 3, 2))
    fine, rec = upsample_bilinear(coarse, 10, 7)
    d_fine = RNG.standard_normal((7, 10, 2))
    d_coarse = upsample_backward(rec, d_fine)
    assert np.isclose((fine * d_fine).sum(), (d_coarse * coarse).sum(), atol=1e-10)


# --------------------------------------------------------------------------
# texel table and baking


def test_texel_table_coverage(ico_mesh):
    table = build_texel_table(ico_mesh, 64)
    assert table.tri.shape == (64, 64)
    assert 0.2 < table.coverage < 0.95
    covered = table.tri >= 0
    b = table.bary[covered]
    assert np.all(b.sum(axis=1) <= 1.0 + 1e-6)
    assert np.all(b >= -1e-6)
    assert np.allclose(b.sum(axis=1), 1.0, atol=1e-9)
    # every triangle of the atlas owns at least one texel at this resolution
    assert len(np.unique(table.tri[covered])) == ico_mesh.num_triangles


def test_texel_table_overlap_rejected():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    tris = np.array([[0, 1, 2], [1, 3, 2]])
    uv = np.array([  # both faces mapped onto the same chart region
        [[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]],
        [[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]],
    ])
    with pytest.raises(UVError):
        build_texel_table(TriMesh(verts, tris, uv), 16)


def test_vertex_normals_sphere(ico_mesh):
    """Icosphere vertex normals point radially outward."""
    vn = vertex_normals(ico_mesh)
    radial = ico_mesh.vertices / np.linalg.norm(ico_mesh.vertices, axis=1,
                                                keepdims=True)
    assert np.all(np.sum(vn * radial, axis=1) > 0.9)


def test_bake_normal_map(ico_mesh, small_camera):
    table = build_texel_table(ico_mesh, 32)
    U = bake_normal_map(ico_mesh, small_camera, table)
    assert U.data.shape == (32, 32, 3)
    covered = table.tri >= 0
    norms = np.linalg.norm(U.data[covered], axis=1)
    assert np.allclose(norms, 1.0, atol=1e-9)
    assert np.all(U.data[~covered] == 0.0)
    # the camera looks at the sphere: some normals must face it (+z)
    assert U.data[covered][:, 2].max() > 0.5


# --------------------------------------------------------------------------
# local position -> uv charts


def test_charts_corners_map_to_uv(ico_mesh):
    """Each triangle corner's local position maps to its uv coordinate."""
    fr = triangle_frames(ico_mesh)
    charts = local_uv_charts(ico_mesh, fr)
    corners = ico_mesh.vertices[ico_mesh.triangles]
    for f in range(ico_mesh.num_triangles):
        for c in range(3):
            local = fr.R[f].T @ (corners[f, c] - fr.T[f]) / fr.k[f]
            uv = uv_of_local(local, f, ico_mesh, fr)
            assert np.allclose(uv, ico_mesh.uv_coords[f, c], atol=1e-9)


def test_charts_centroid_maps_to_uv_centroid(ico_mesh):
    fr = triangle_frames(ico_mesh)
    charts = local_uv_charts(ico_mesh, fr)
    p, _ = uv_for_cloud(
        np.zeros((ico_mesh.num_triangles, 3)),
        np.arange(ico_mesh.num_triangles), charts,
    )
    assert np.allclose(p, ico_mesh.uv_coords.mean(axis=1), atol=1e-9)


def test_uv_for_cloud_clamps(ico_mesh):
    fr = triangle_frames(ico_mesh)
    charts = local_uv_charts(ico_mesh, fr)
    far = np.full((ico_mesh.num_triangles, 3), 100.0)
    p, rec = uv_for_cloud(far, np.arange(ico_mesh.num_triangles), charts)
    assert np.all((p >= 0.0) & (p <= 1.0))
    assert not rec.clamp_mask.all()


def test_uv_for_cloud_z_independent(ico_mesh):
    """The local z (normal) component never affects uv."""
    fr = triangle_frames(ico_mesh)
    charts = local_uv_charts(ico_mesh, fr)
    n = ico_mesh.num_triangles
    base = 0.1 * RNG.standard_normal((n, 3))
    shifted = base.copy()
    shifted[:, 2] += RNG.standard_normal(n)
    p0, _ = uv_for_cloud(base, np.arange(n), charts)
    p1, _ = uv_for_cloud(shifted, np.arange(n), charts)
    assert np.array_equal(p0, p1)
