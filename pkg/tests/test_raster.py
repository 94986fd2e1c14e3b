import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigenavatar.errors import ParameterError, PreconditionError
from eigenavatar.mesh import Mesh, RigidTransform
from eigenavatar.raster import (NO_TRIANGLE, Camera, _coverage, extract_texture, extract_textures,
                                lattice_lookup, look_at, rasterize, render_textured,
                                render_vertex_colors, surface_points, texel_barycentrics,
                                texel_count, texel_grid, triangle_visibility)

from oracles import random_convex_scene, ray_cast_visibility


def _screen_camera(w=16, h=16):
    """Camera whose image coordinates equal (x, y) of points at z = 1."""
    return Camera(1.0, 1.0, 0.0, 0.0, w, h, RigidTransform.identity())


def _screen_mesh(uv, tris, z=1.0):
    uv = np.asarray(uv, dtype=float)
    z = np.broadcast_to(np.asarray(z, dtype=float), (len(uv),))
    return Mesh(np.column_stack([uv * z[:, None], z]), tris)


def test_shared_edges_cover_each_pixel_once():
    # the diagonal and outer edges pass exactly through pixel centres
    mesh = _screen_mesh([[0.5, 0.5], [8.5, 0.5], [8.5, 8.5], [0.5, 8.5]],
                        [[0, 1, 2], [0, 2, 3]])
    cov = _coverage(mesh, _screen_camera())
    pix = cov.row * 16 + cov.col
    assert len(np.unique(pix)) == len(pix)
    # every centre on the diagonal belongs to exactly one of the two triangles
    diag = {(k, k) for k in range(1, 8)}
    got = {(r, c) for r, c in zip(cov.row, cov.col) if r == c}
    assert diag <= got


def test_adjacent_squares_tile_without_gaps_or_overlap():
    # two quads sharing a vertical edge through pixel centres at x = 4.5
    mesh = _screen_mesh([[0.5, 0.5], [4.5, 0.5], [8.5, 0.5], [0.5, 6.5], [4.5, 6.5], [8.5, 6.5]],
                        [[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4]])
    cov = _coverage(mesh, _screen_camera())
    pix = cov.row * 16 + cov.col
    assert len(np.unique(pix)) == len(pix)
    # interior column of centres on the shared edge is covered exactly once
    for r in range(1, 6):
        assert np.sum((cov.row == r) & (cov.col == 4)) == 1


def test_depth_and_ids_of_a_fronto_parallel_square():
    mesh = _screen_mesh([[1.0, 1.0], [9.0, 1.0], [9.0, 9.0], [1.0, 9.0]],
                        [[0, 1, 2], [0, 2, 3]], z=2.0)
    depth, ids = rasterize(mesh, _screen_camera(12, 12))
    inside = ids >= 0
    assert inside.sum() == 64
    np.testing.assert_allclose(depth[inside], 2.0)
    assert np.all(np.isinf(depth[~inside])) and np.all(ids[~inside] == NO_TRIANGLE)


def test_nearer_triangle_wins_and_ties_go_to_lower_index():
    uv = [[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]]
    far = _screen_mesh(uv, [[0, 1, 2]], z=3.0)
    near = _screen_mesh(uv, [[0, 1, 2]], z=2.0)
    both = Mesh(np.vstack([far.vertices, near.vertices]), [[0, 1, 2], [3, 4, 5]])
    _, ids = rasterize(both, _screen_camera())
    assert set(np.unique(ids[ids >= 0])) == {1}
    twin = Mesh(np.vstack([near.vertices, near.vertices]), [[3, 4, 5], [0, 1, 2]])
    _, ids = rasterize(twin, _screen_camera())
    assert set(np.unique(ids[ids >= 0])) == {0}


def test_perspective_correct_depth_on_a_slanted_plane():
    cam = look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0], width=48, height=48)
    verts = np.array([[-1.0, -1.0, -0.5], [1.0, -1.0, 0.5], [1.0, 1.0, 0.5], [-1.0, 1.0, -0.5]])
    mesh = Mesh(verts, [[0, 1, 2], [0, 2, 3]])
    depth, ids = rasterize(mesh, cam)
    rows, cols = np.nonzero(ids >= 0)
    d = cam.rays(cols + 0.5, rows + 0.5)
    # plane z = x / 2 in world; camera sits at z = -3 looking along +z
    world_dir = d @ cam.extrinsic.rotation
    eye = np.array([0.0, 0.0, -3.0])
    t = (eye[2] - 0.5 * eye[0]) / (0.5 * world_dir[:, 0] - world_dir[:, 2])
    np.testing.assert_allclose(depth[rows, cols], t, rtol=1e-10)


def test_occluded_and_clipped_triangles_are_not_visible():
    uv = [[2.0, 2.0], [10.0, 2.0], [2.0, 10.0]]
    back = _screen_mesh(uv, [[0, 1, 2]], z=3.0)
    front = _screen_mesh([[1.0, 1.0], [6.0, 1.0], [1.0, 6.0]], [[0, 1, 2]], z=2.0)
    offscreen = _screen_mesh([[12.0, 12.0], [20.0, 12.0], [12.0, 15.0]], [[0, 1, 2]], z=2.0)
    mesh = Mesh(np.vstack([back.vertices, front.vertices, offscreen.vertices]),
                [[0, 1, 2], [3, 4, 5], [6, 7, 8]])
    cam = _screen_camera()
    depth, ids = rasterize(mesh, cam)
    vis = triangle_visibility(mesh, cam, depth, ids, eps=1e-3)
    np.testing.assert_array_equal(vis, [False, True, False])


def test_visibility_threshold_accepts_close_coplanar_layers():
    uv = [[1.0, 1.0], [12.0, 1.0], [1.0, 12.0]]
    a = _screen_mesh(uv, [[0, 1, 2]], z=2.0)
    b = _screen_mesh(uv, [[0, 1, 2]], z=2.0005)
    mesh = Mesh(np.vstack([a.vertices, b.vertices]), [[0, 1, 2], [3, 4, 5]])
    cam = _screen_camera()
    depth, ids = rasterize(mesh, cam)
    # the back layer owns no pixel, so it stays invisible whatever eps is
    assert not triangle_visibility(mesh, cam, depth, ids, eps=1e-2)[1]
    assert triangle_visibility(mesh, cam, depth, ids, eps=1e-2)[0]


def test_visibility_rejects_mismatched_maps():
    mesh = _screen_mesh([[1.0, 1.0], [5.0, 1.0], [1.0, 5.0]], [[0, 1, 2]])
    with pytest.raises(ParameterError):
        triangle_visibility(mesh, _screen_camera(), np.zeros((3, 3)), np.zeros((3, 3)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_visibility_agrees_with_ray_casting(seed):
    mesh, cam = random_convex_scene(np.random.default_rng(seed), max_triangles=120, size=32)
    eps = 1e-3 * mesh.bbox_diagonal()
    depth, ids = rasterize(mesh, cam)
    np.testing.assert_array_equal(triangle_visibility(mesh, cam, depth, ids, eps),
                                  ray_cast_visibility(mesh, cam, eps))


@given(st.integers(1, 40))
def test_texel_lattice(T):
    assert texel_count(T) == T * (T + 1) // 2 == len(texel_grid(T))
    b = texel_barycentrics(T)
    np.testing.assert_allclose(b.sum(1), 1.0)
    assert np.all(b > 0)


def test_single_texel_sits_at_centroid():
    np.testing.assert_allclose(texel_barycentrics(1), [[1 / 3, 1 / 3, 1 / 3]])
    with pytest.raises(ParameterError):
        texel_barycentrics(0)


def test_texel_extraction_samples_a_linear_image_exactly():
    cam = _screen_camera(32, 32)
    mesh = _screen_mesh([[2.0, 3.0], [25.0, 4.0], [6.0, 28.0]], [[0, 1, 2]])
    yy, xx = np.mgrid[0:32, 0:32]
    img = np.stack([xx / 40.0, yy / 40.0, np.full(xx.shape, 0.5)], -1)
    tex = extract_textures(mesh, cam, img, [0], 5)[0]
    pts = texel_barycentrics(5) @ mesh.vertices
    np.testing.assert_allclose(tex[:, 0], (pts[:, 0] - 0.5) / 40.0, atol=1e-12)
    np.testing.assert_allclose(tex[:, 1], (pts[:, 1] - 0.5) / 40.0, atol=1e-12)


def test_extract_texture_requires_visibility():
    cam = _screen_camera()
    mesh = _screen_mesh([[20.0, 20.0], [25.0, 20.0], [20.0, 25.0]], [[0, 1, 2]])
    with pytest.raises(PreconditionError):
        extract_texture(mesh, cam, np.zeros((16, 16, 3)), 0, T=3)


@given(st.integers(2, 12))
def test_lattice_lookup_hits_texels_at_their_centres(T):
    tex = np.random.default_rng(T).random((1, texel_count(T), 3))
    b = texel_barycentrics(T)
    out = lattice_lookup(np.repeat(tex, len(b), 0), b[:, 1], b[:, 2], T)
    np.testing.assert_allclose(out, tex[0], atol=1e-12)


def test_render_constant_textures_and_vertex_colours():
    cam = _screen_camera()
    mesh = _screen_mesh([[1.0, 1.0], [14.0, 1.0], [1.0, 14.0]], [[0, 1, 2]])
    img = render_textured(mesh, cam, np.full((1, texel_count(4), 3), 0.25), 4, background=1.0)
    _, ids = rasterize(mesh, cam)
    np.testing.assert_allclose(img[ids >= 0], 0.25)
    np.testing.assert_allclose(img[ids < 0], 1.0)
    col = render_vertex_colors(mesh, cam, np.tile([0.2, 0.4, 0.6], (3, 1)))
    np.testing.assert_allclose(col[ids >= 0], [0.2, 0.4, 0.6] * np.ones(((ids >= 0).sum(), 3)))
    tri, bary = surface_points(mesh, cam)
    np.testing.assert_allclose(bary[ids >= 0].sum(1), 1.0)


def test_camera_serialisation_and_look_at_centre():
    cam = look_at([1.0, 2.0, 3.0], [0.0, 0.5, 0.0], width=40, height=30, fov_deg=50)
    back = Camera.from_dict(cam.to_dict())
    np.testing.assert_allclose(back.extrinsic.as_matrix(), cam.extrinsic.as_matrix())
    u, v, z = cam.project(np.array([[0.0, 0.5, 0.0]]))[0]
    assert (u, v) == pytest.approx((20.0, 15.0)) and z > 0
    with pytest.raises(ParameterError):
        Camera(0.0, 1.0, 0.0, 0.0, 4, 4, RigidTransform.identity())
