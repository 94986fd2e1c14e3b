"""Independent reference computations used to check the package.

Nothing here calls into the code paths it is used to verify.
"""
import numpy as np
from scipy.spatial import ConvexHull

from eigenavatar.mesh import Mesh
from eigenavatar.raster import look_at


def brute_force_pca(P, L):
    """Top-L eigenpairs of the explicit D x D scatter matrix."""
    P = np.asarray(P, dtype=float)
    mean = P.mean(axis=1)
    C = P - mean[:, None]
    S = C @ C.T
    lam, vec = np.linalg.eigh(S)
    order = np.argsort(lam)[::-1][:L]
    lam, vec = lam[order], vec[:, order]
    for k in range(vec.shape[1]):
        i = np.argmax(np.abs(vec[:, k]))
        if vec[i, k] < 0:
            vec[:, k] = -vec[:, k]
    return mean, vec, np.maximum(lam, 0.0)


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def ray_cast_visibility(mesh, camera, eps, near=1e-3):
    """Per-triangle visibility by casting one ray per pixel against every
    triangle (Moller-Trumbore, inclusive edges).

    A triangle is visible when all three vertices project inside the image in
    front of the near plane, it is the nearest hit (ties to the lower index) of
    at least one pixel ray, and at every pixel it is hit its depth is within
    ``eps`` of the nearest hit.
    """
    R, t = camera.extrinsic.rotation, camera.extrinsic.translation
    pc = mesh.vertices @ R.T + t
    tris = pc[mesh.triangles]
    cols, rows = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    d = np.stack([(cols + 0.5 - camera.cx) / camera.fx,
                  (rows + 0.5 - camera.cy) / camera.fy,
                  np.ones(cols.shape)], -1).reshape(-1, 3)
    n_pix, n_tri = len(d), len(tris)
    depth_hits = np.full((n_tri, n_pix), np.inf)
    for k, (a, b, c) in enumerate(tris):
        if min(a[2], b[2], c[2]) <= near:
            continue
        e1, e2 = b - a, c - a
        p = np.cross(d, e2)
        det = p @ e1
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            s = -a  # ray origin is the camera centre
            q = np.cross(s, e1)
            u = (p @ s) * inv
            v = (d @ q) * inv
            tt = (e2 @ q) * inv
        hit = (det != 0) & (u >= 0) & (v >= 0) & (u + v <= 1) & (tt > 0)
        # d has unit z, so the ray parameter is the camera-frame depth
        depth_hits[k, hit] = tt[hit]
    nearest = depth_hits.min(axis=0)
    winner = np.argmin(depth_hits, axis=0)
    winner[~np.isfinite(nearest)] = -1
    uv = pc[:, :2] / pc[:, 2:3] * [camera.fx, camera.fy] + [camera.cx, camera.cy]
    inside = (pc[:, 2] > near) & (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width)
    inside &= (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height)
    visible = np.zeros(n_tri, dtype=bool)
    owned = np.zeros(n_tri, dtype=bool)
    owned[winner[winner >= 0]] = True
    for k in range(n_tri):
        hit = np.isfinite(depth_hits[k])
        if not owned[k] or not inside[mesh.triangles[k]].all():
            continue
        visible[k] = bool(np.all(np.abs(depth_hits[k, hit] - nearest[hit]) < eps))
    return visible


def random_convex_scene(rng, max_triangles=500, size=64):
    """Convex hull of random points plus a camera looking at it from outside."""
    n_pts = int(rng.integers(8, max_triangles // 2 + 2))
    pts = rng.normal(size=(n_pts, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= rng.uniform(0.6, 1.0, size=(n_pts, 1))
    pts *= rng.uniform(0.5, 1.5, size=3)
    hull = ConvexHull(pts)
    used = np.unique(hull.simplices)
    remap = np.full(n_pts, -1)
    remap[used] = np.arange(len(used))
    tris = remap[hull.simplices][:max_triangles]
    mesh = Mesh(pts[used], tris)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    eye = direction * rng.uniform(3.5, 6.0)
    up = np.cross(direction, rng.normal(size=3))
    cam = look_at(eye, rng.normal(scale=0.1, size=3), up, width=size, height=size,
                  fov_deg=float(rng.uniform(35, 55)))
    return mesh, cam
