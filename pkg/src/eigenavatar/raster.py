"""Software rasterizer, triangle visibility and per-triangle texture sampling.

Conventions: camera frame x right, y down, z forward; pixel (row i, col j)
has its centre at image coordinates (u, v) = (j + 0.5, i + 0.5).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PreconditionError
from .mesh import Mesh, RigidTransform

NO_TRIANGLE = -1
NEAR = 1e-3


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform  # world -> camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("image size must be positive")

    def to_camera(self, points):
        return self.extrinsic.apply(points)

    def project(self, points):
        """World points -> (u, v, z)."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v, z], axis=-1)

    def rays(self, u, v):
        """Camera-frame ray directions with unit z component."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], -1)

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.extrinsic.rotation.tolist(),
            "translation": self.extrinsic.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        ext = RigidTransform(np.array(d["rotation"]), np.array(d["translation"]))
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]), ext)


def look_at(eye, target, up=(0.0, 1.0, 0.0), *, width=256, height=256, fov_deg=40.0) -> Camera:
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    f = 0.5 * height / np.tan(np.radians(fov_deg) / 2)
    return Camera(f, f, width / 2.0, height / 2.0, width, height, RigidTransform(R, -R @ eye))


@dataclass(frozen=True, eq=False)
class Coverage:
    """Every (triangle, pixel) pair whose pixel centre lies inside the
    triangle's projection, before depth testing."""

    tri: np.ndarray
    row: np.ndarray
    col: np.ndarray
    bary: np.ndarray  # perspective-correct barycentrics (n, 3)
    depth: np.ndarray


def _coverage(mesh: Mesh, camera: Camera, near=NEAR) -> Coverage:
    W, H = camera.width, camera.height
    empty = Coverage(*(np.zeros(0, np.int64) for _ in range(3)), np.zeros((0, 3)), np.zeros(0))
    if mesh.n_triangles == 0:
        return empty
    proj = camera.project(mesh.vertices)
    P = proj[mesh.triangles]  # (T, 3, 3)
    ok = np.all(P[:, :, 2] > near, axis=1)
    xy = P[:, :, :2]
    x0, y0 = xy[:, 0, 0], xy[:, 0, 1]
    x1, y1 = xy[:, 1, 0], xy[:, 1, 1]
    x2, y2 = xy[:, 2, 0], xy[:, 2, 1]
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    ok &= area != 0
    ok &= np.all(np.isfinite(xy), axis=(1, 2))
    tri_ids = np.flatnonzero(ok)
    if tri_ids.size == 0:
        return empty
    xs = xy[tri_ids, :, 0]
    ys = xy[tri_ids, :, 1]
    c0 = np.clip(np.ceil(xs.min(1) - 0.5), 0, W).astype(np.int64)
    c1 = np.clip(np.floor(xs.max(1) - 0.5), -1, W - 1).astype(np.int64)
    r0 = np.clip(np.ceil(ys.min(1) - 0.5), 0, H).astype(np.int64)
    r1 = np.clip(np.floor(ys.max(1) - 0.5), -1, H - 1).astype(np.int64)
    nc = np.maximum(c1 - c0 + 1, 0)
    nr = np.maximum(r1 - r0 + 1, 0)
    counts = nc * nr
    keep = counts > 0
    tri_ids, c0, r0, nc, counts = tri_ids[keep], c0[keep], r0[keep], nc[keep], counts[keep]
    if tri_ids.size == 0:
        return empty
    owner = np.repeat(np.arange(len(tri_ids)), counts)
    start = np.cumsum(counts) - counts
    local = np.arange(counts.sum()) - start[owner]
    col = c0[owner] + local % nc[owner]
    row = r0[owner] + local // nc[owner]
    tri = tri_ids[owner]
    px = col + 0.5
    py = row + 0.5

    V = xy[tri]  # (n, 3, 2)
    sgn = np.sign(area[tri])
    # edge e_k is opposite vertex k: (v1 -> v2), (v2 -> v0), (v0 -> v1)
    E = np.empty((len(tri), 3))
    inc = np.empty((len(tri), 3), dtype=bool)
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        ax, ay = V[:, a, 0], V[:, a, 1]
        dx = V[:, b, 0] - ax
        dy = V[:, b, 1] - ay
        e = (dx * (py - ay) - dy * (px - ax)) * sgn
        # inward normal of the edge; ties go to left and top edges
        nx, ny = -dy * sgn, dx * sgn
        tie_ok = (nx > 0) | ((nx == 0) & (ny > 0))
        E[:, k] = e
        inc[:, k] = (e > 0) | ((e == 0) & tie_ok)
    inside = inc.all(axis=1)
    tri, row, col, E = tri[inside], row[inside], col[inside], E[inside]
    bs = E / (area[tri] * sgn[inside])[:, None]  # screen-space barycentrics
    z = P[tri, :, 2]
    w = bs / z
    inv_z = w.sum(1)
    depth = 1.0 / inv_z
    bary = w / inv_z[:, None]
    return Coverage(tri, row, col, bary, depth)


def rasterize(mesh: Mesh, camera: Camera, near=NEAR):
    """Z-buffered rasterization. Returns (depth, ids) arrays of shape (H, W);
    background depth is +inf and background id is -1. Equal depths resolve to
    the lower triangle index."""
    depth, ids, _ = _zbuffer(mesh, camera, near)
    return depth, ids


def _zbuffer(mesh, camera, near=NEAR):
    cov = _coverage(mesh, camera, near)
    H, W = camera.height, camera.width
    depth = np.full((H, W), np.inf)
    ids = np.full((H, W), NO_TRIANGLE, dtype=np.int64)
    if cov.tri.size == 0:
        return depth, ids, (cov, np.zeros(0, np.int64))
    pix = cov.row * W + cov.col
    order = np.lexsort((cov.tri, cov.depth, pix))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    win = order[first]
    depth.flat[pix[win]] = cov.depth[win]
    ids.flat[pix[win]] = cov.tri[win]
    return depth, ids, (cov, win)


def default_epsilon(mesh: Mesh) -> float:
    return 1e-3 * mesh.bbox_diagonal()


def _plane_depth(mesh: Mesh, camera: Camera, tri, row, col):
    """Depth where the pixel ray meets the plane of ``tri`` (camera frame)."""
    pc = camera.to_camera(mesh.vertices)[mesh.triangles[tri]]  # (n, 3, 3)
    n = np.cross(pc[:, 1] - pc[:, 0], pc[:, 2] - pc[:, 0])
    d = camera.rays(col + 0.5, row + 0.5)
    num = np.einsum("ij,ij->i", n, pc[:, 0])
    den = np.einsum("ij,ij->i", n, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den


def triangle_visibility(mesh: Mesh, camera: Camera, depth, ids, eps=None, near=NEAR):
    """Boolean visibility per triangle under the all-pixels rule.

    Every pixel whose centre falls inside the triangle's projection is
    back-projected onto the triangle and compared against the depth map; the
    pixel passes when the depths differ by less than ``eps``. A triangle is
    visible when its projection lies inside the image, it owns at least one
    pixel of the ID map and all of its pixels pass.
    """
    if eps is None:
        eps = default_epsilon(mesh)
    depth = np.asarray(depth)
    ids = np.asarray(ids)
    if depth.shape != (camera.height, camera.width) or ids.shape != depth.shape:
        raise ParameterError("depth/id maps do not match the camera")
    visible = np.zeros(mesh.n_triangles, dtype=bool)
    owners = np.unique(ids[ids >= 0])
    if owners.size == 0:
        return visible
    cov = _coverage(mesh, camera, near)
    sel = np.isin(cov.tri, owners)
    tri, row, col = cov.tri[sel], cov.row[sel], cov.col[sel]
    zt = _plane_depth(mesh, camera, tri, row, col)
    ok = np.abs(zt - depth[row, col]) < eps
    bad = np.zeros(mesh.n_triangles, dtype=bool)
    bad[tri[~ok]] = True
    visible[owners] = True
    visible &= ~bad
    visible &= _inside_image(mesh, camera, near)
    return visible


def _inside_image(mesh, camera, near=NEAR):
    uvz = camera.project(mesh.vertices)[mesh.triangles]
    with np.errstate(invalid="ignore"):
        ok = (uvz[..., 2] > near) & (uvz[..., 0] >= 0) & (uvz[..., 0] <= camera.width)
        ok &= (uvz[..., 1] >= 0) & (uvz[..., 1] <= camera.height)
    return ok.all(axis=1)


# -- canonical texel lattice -------------------------------------------------

def texel_count(T: int) -> int:
    return T * (T + 1) // 2


def texel_grid(T: int):
    """Integer lattice (i, j), i + j <= T - 1, in row-major order of i."""
    ij = [(i, j) for i in range(T) for j in range(T - i)]
    return np.array(ij, dtype=np.int64).reshape(-1, 2)


def texel_barycentrics(T: int) -> np.ndarray:
    """Barycentric coordinates (N, 3) of the canonical texel centres.

    Texel (i, j) sits at (a, b) = ((i + 1/3) / T, (j + 1/3) / T) where a and b
    weigh vertices 1 and 2. T = 1 gives the centroid.
    """
    if T < 1:
        raise ParameterError("texel side T must be >= 1")
    ij = texel_grid(T).astype(float)
    a = (ij[:, 0] + 1.0 / 3.0) / T
    b = (ij[:, 1] + 1.0 / 3.0) / T
    return np.stack([1.0 - a - b, a, b], axis=1)


def bilinear_sample(image, u, v):
    """Sample ``image`` (H, W, C) at image coordinates (u, v), clamp-to-edge."""
    img = np.asarray(image, dtype=float)
    H, W = img.shape[:2]
    x = np.clip(np.asarray(u, dtype=float) - 0.5, 0.0, W - 1.0)
    y = np.clip(np.asarray(v, dtype=float) - 0.5, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), W - 1)
    y0 = np.minimum(np.floor(y).astype(np.int64), H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def as_float_image(image):
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img.astype(float) / 255.0
    return img.astype(float)


def extract_textures(mesh: Mesh, camera: Camera, image, triangles, T: int) -> np.ndarray:
    """Texel colours (n, N, 3) for each triangle in ``triangles``; no
    visibility check."""
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1)
    bary = texel_barycentrics(T)
    corners = mesh.vertices[mesh.triangles[triangles]]  # (n, 3, 3)
    pts = np.einsum("kc,ncd->nkd", bary, corners)
    uvz = camera.project(pts)
    return np.clip(bilinear_sample(as_float_image(image), uvz[..., 0], uvz[..., 1]), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class TriangleTexture:
    texels: np.ndarray  # (N, 3) RGB in [0, 1]
    triangle: int
    frame: int = -1

    @property
    def T(self):
        n = len(self.texels)
        return int(round((np.sqrt(8 * n + 1) - 1) / 2))


def extract_texture(mesh, camera, image, triangle, T=16, *, frame=-1, visible=None, eps=None):
    """Texture of one visible triangle. ``visible`` is a per-triangle mask from
    :func:`triangle_visibility`; it is computed when not given."""
    if visible is None:
        depth, ids = rasterize(mesh, camera)
        visible = triangle_visibility(mesh, camera, depth, ids, eps)
    if not visible[triangle]:
        raise PreconditionError(f"triangle {triangle} is not visible from this camera")
    tex = extract_textures(mesh, camera, image, [triangle], T)[0]
    return TriangleTexture(tex, int(triangle), int(frame))


def lattice_lookup(textures, a, b, T):
    """Linear interpolation of texel arrays over the canonical lattice.

    ``textures`` is (n, N, C); ``a``/``b`` are barycentric weights of vertices
    1 and 2 for n query points.
    """
    textures = np.asarray(textures)
    index = np.full((T, T), -1, dtype=np.int64)
    g = texel_grid(T)
    index[g[:, 0], g[:, 1]] = np.arange(len(g))
    n = len(textures)
    if T == 1:
        return textures[:, 0]
    x = np.asarray(a, dtype=float) * T - 1.0 / 3.0
    y = np.asarray(b, dtype=float) * T - 1.0 / 3.0
    x = np.clip(x, 0.0, T - 1.0)
    y = np.clip(y, 0.0, T - 1.0)
    over = x + y - (T - 1.0)
    x = np.where(over > 0, x - over / 2, x)
    y = np.where(over > 0, y - over / 2, y)
    x = np.clip(x, 0.0, T - 1.0)
    y = np.clip(y, 0.0, T - 1.0)
    i0 = np.minimum(np.floor(x), T - 2).astype(np.int64)
    j0 = np.minimum(np.floor(y), T - 2).astype(np.int64)
    # keep the base cell on the lattice
    fix = i0 + j0 > T - 2
    i0 = np.where(fix, np.minimum(i0, T - 2 - j0), i0)
    i0 = np.maximum(i0, 0)
    j0 = np.maximum(np.minimum(j0, T - 2 - i0), 0)
    fx = x - i0
    fy = y - j0
    lower = fx + fy <= 1.0
    rows = np.arange(n)
    t00 = textures[rows, index[i0, j0]]
    t10 = textures[rows, index[i0 + 1, j0]]
    t01 = textures[rows, index[i0, j0 + 1]]
    i11 = index[np.minimum(i0 + 1, T - 1), np.minimum(j0 + 1, T - 1)]
    has11 = i11 >= 0
    t11 = textures[rows, np.where(has11, i11, index[i0, j0])]
    fxe, fye = fx[:, None], fy[:, None]
    low = t00 + fxe * (t10 - t00) + fye * (t01 - t00)
    up = t11 + (1 - fxe) * (t01 - t11) + (1 - fye) * (t10 - t11)
    use_low = lower | ~has11
    return np.where(use_low[:, None], low, up)


def render_textured(mesh: Mesh, camera: Camera, textures, T: int, background=0.0):
    """Render per-triangle texel rasters (n_triangles, N, 3) to an RGB image."""
    depth, ids, (cov, win) = _zbuffer(mesh, camera)
    img = np.full((camera.height, camera.width, 3), background, dtype=float)
    if win.size == 0:
        return img
    tri = cov.tri[win]
    bary = cov.bary[win]
    tex = np.asarray(textures)[tri]
    img[cov.row[win], cov.col[win]] = lattice_lookup(tex, bary[:, 1], bary[:, 2], T)
    return img


def render_vertex_colors(mesh: Mesh, camera: Camera, colors, background=1.0):
    """Render per-vertex colours (V, 3), interpolated perspective-correctly."""
    depth, ids, (cov, win) = _zbuffer(mesh, camera)
    img = np.full((camera.height, camera.width, 3), background, dtype=float)
    if win.size == 0:
        return img
    tri = cov.tri[win]
    c = np.asarray(colors, dtype=float)[mesh.triangles[tri]]
    img[cov.row[win], cov.col[win]] = np.einsum("nk,nkc->nc", cov.bary[win], c)
    return img


def surface_points(mesh: Mesh, camera: Camera):
    """Per-pixel (triangle id, barycentrics) of the visible surface."""
    depth, ids, (cov, win) = _zbuffer(mesh, camera)
    bary = np.zeros((camera.height, camera.width, 3))
    if win.size:
        bary[cov.row[win], cov.col[win]] = cov.bary[win]
    return ids, bary
