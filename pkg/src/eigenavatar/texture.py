"""Eigen-texture: per-triangle appearance subspaces over the frames where a
triangle is fully visible."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import subspace
from .errors import NoTextureError, ParameterError
from .mesh import Mesh
from .raster import (TriangleTexture, as_float_image, extract_textures, rasterize,
                     texel_count, texel_grid, triangle_visibility)
from .subspace import EigenSubspace

NOT_OBSERVED = -1


@dataclass(frozen=True, eq=False)
class TextureTrack:
    """Observations of one triangle: frame indices (strictly increasing) and
    the matching (n, N, 3) texel arrays."""

    triangle: int
    frames: np.ndarray
    textures: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        tex = np.asarray(self.textures)
        if tex.ndim != 3 or tex.shape[0] != len(frames) or tex.shape[2] != 3:
            raise ParameterError("track textures must be (n_frames, N, 3)")
        if np.any(np.diff(frames) <= 0):
            raise ParameterError("track frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "textures", tex)

    def __len__(self):
        return len(self.frames)

    @property
    def empty(self):
        return len(self.frames) == 0

    def items(self):
        for f, tex in zip(self.frames, self.textures):
            yield int(f), TriangleTexture(np.asarray(tex, dtype=float), self.triangle, int(f))

    def sample_matrix(self):
        """3N x F matrix of vectorised textures (texel-major, RGB interleaved)."""
        return np.asarray(self.textures, dtype=float).reshape(len(self.frames), -1).T


def visibility_schedule(meshes, cameras, eps=None):
    """Per (frame, triangle) index of the first camera that sees the triangle
    fully, or -1. Returns an int8 array (F, n_triangles)."""
    meshes = list(meshes)
    if not meshes:
        return np.zeros((0, 0), dtype=np.int8)
    n_tri = meshes[0].n_triangles
    out = np.full((len(meshes), n_tri), NOT_OBSERVED, dtype=np.int8)
    for f, mesh in enumerate(meshes):
        if mesh.n_triangles != n_tri:
            raise ParameterError("meshes must share topology")
        e = eps
        for c, cam in enumerate(cameras):
            depth, ids = rasterize(mesh, cam)
            vis = triangle_visibility(mesh, cam, depth, ids, e)
            take = vis & (out[f] == NOT_OBSERVED)
            out[f, take] = c
    return out


def build_tracks(meshes, cameras, images, eps=None, T=16, schedule=None, dtype=np.float32):
    """Extract a texture per frame for every triangle visible in that frame.

    ``images(f, c)`` returns the RGB image of frame f seen by camera c; a
    nested sequence ``images[f][c]`` is accepted too. Each triangle gets at
    most one observation per frame, taken from the first camera that sees it.
    Returns (tracks, schedule).
    """
    meshes = list(meshes)
    if schedule is None:
        schedule = visibility_schedule(meshes, cameras, eps)
    get = images if callable(images) else (lambda f, c: images[f][c])
    F, n_tri = schedule.shape
    N = texel_count(T)
    counts = (schedule >= 0).sum(0)
    store = [np.zeros((int(k), N, 3), dtype=dtype) for k in counts]
    frames = [np.zeros(int(k), dtype=np.int64) for k in counts]
    fill = np.zeros(n_tri, dtype=np.int64)
    for f in range(F):
        for c in range(len(cameras)):
            tris = np.flatnonzero(schedule[f] == c)
            if tris.size == 0:
                continue
            tex = extract_textures(meshes[f], cameras[c], as_float_image(get(f, c)), tris, T)
            for t, x in zip(tris, tex):
                store[t][fill[t]] = x
                frames[t][fill[t]] = f
                fill[t] += 1
    tracks = [TextureTrack(t, frames[t], store[t]) for t in range(n_tri)]
    return tracks, schedule


@dataclass(frozen=True, eq=False)
class TextureModel:
    """Per-triangle subspaces (None when never observed) plus bookkeeping."""

    subspaces: tuple
    T: int
    visibility: np.ndarray  # (F, n_triangles) bool
    # triangle whose mean texture stands in for a never-observed one (-1: none)
    fallback: np.ndarray

    def __post_init__(self):
        D = 3 * texel_count(self.T)
        for t, s in enumerate(self.subspaces):
            if s is not None and s.dim != D:
                raise ParameterError(f"triangle {t}: subspace dim {s.dim} != 3N = {D}")
        vis = np.asarray(self.visibility, dtype=bool)
        fb = np.asarray(self.fallback, dtype=np.int64)
        if fb.shape != (len(self.subspaces),):
            raise ParameterError("fallback map must have one entry per triangle")
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "fallback", fb)

    @property
    def n_triangles(self):
        return len(self.subspaces)

    @property
    def N(self):
        return texel_count(self.T)

    def observed(self):
        return np.array([s is not None for s in self.subspaces], dtype=bool)

    def dims(self):
        return [0 if s is None else s.n_components for s in self.subspaces]

    def regression_only(self):
        """Triangles that never passed the visibility test."""
        return np.flatnonzero(~self.observed())


def default_rank(F, N, L=10):
    return int(max(0, min(L, F - 1, 3 * N)))


def _fit_track(P, L):
    if L >= 1:
        return subspace.fit(P, L)
    mean = P.mean(axis=1)
    spec = np.zeros(1)
    return EigenSubspace(mean, np.zeros((len(mean), 0)), np.zeros(0), spec)


def triangle_parts(mesh: Mesh):
    """Part owning the majority of each triangle's vertices (first vertex's
    part when all three differ)."""
    p = mesh.part_of_vertex[mesh.triangles]
    maj = p[:, 0].copy()
    maj = np.where(p[:, 1] == p[:, 2], p[:, 1], maj)
    return maj


def fallback_map(mesh: Mesh, observed):
    """For each never-observed triangle, the observed triangle on the same part
    with the nearest centroid (falling back to any part). Observed triangles map
    to themselves."""
    observed = np.asarray(observed, dtype=bool)
    out = np.where(observed, np.arange(len(observed)), NOT_OBSERVED)
    if observed.all() or not observed.any():
        return out
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    parts = triangle_parts(mesh)
    for t in np.flatnonzero(~observed):
        pool = np.flatnonzero(observed & (parts == parts[t]))
        if pool.size == 0:
            pool = np.flatnonzero(observed)
        d = np.sum((cent[pool] - cent[t]) ** 2, axis=1)
        out[t] = pool[np.argmin(d)]
    return out


def fit_texture_model(tracks, L=10, *, T=None, visibility=None, rest_mesh=None) -> TextureModel:
    """One subspace per observed triangle with rank min(L, F - 1, 3N).

    Triangles whose track is empty get no subspace; when ``rest_mesh`` is
    given they borrow the mean texture of the nearest observed triangle on
    the same part.
    """
    tracks = list(tracks)
    if T is None:
        sizes = {t.textures.shape[1] for t in tracks if not t.empty}
        if len(sizes) > 1:
            raise ParameterError("tracks disagree on the texel count")
        N = sizes.pop() if sizes else 1
        T = int(round((np.sqrt(8 * N + 1) - 1) / 2))
    N = texel_count(T)
    subs = []
    for track in tracks:
        if track.empty:
            subs.append(None)
            continue
        if track.textures.shape[1] != N:
            raise ParameterError(f"triangle {track.triangle}: expected {N} texels")
        P = track.sample_matrix()
        subs.append(_fit_track(P, default_rank(P.shape[1], N, L)))
    observed = np.array([s is not None for s in subs], dtype=bool)
    if rest_mesh is not None:
        fb = fallback_map(rest_mesh, observed)
    else:
        fb = np.where(observed, np.arange(len(subs)), NOT_OBSERVED)
    if visibility is None:
        n_frames = 1 + max((int(t.frames[-1]) for t in tracks if not t.empty), default=-1)
        visibility = np.zeros((n_frames, len(tracks)), dtype=bool)
        for t in tracks:
            visibility[t.frames, t.triangle] = True
    return TextureModel(tuple(subs), int(T), _as_mask(visibility), fb)


def _as_mask(visibility):
    vis = np.asarray(visibility)
    return vis if vis.dtype == bool else vis >= 0


def embed_texture(model: TextureModel, triangle, texels):
    sub = model.subspaces[triangle]
    if sub is None:
        raise NoTextureError(f"triangle {triangle} has no texture subspace")
    return subspace.embed(sub, np.asarray(texels, dtype=float).reshape(-1))


def synthesize_texture(model: TextureModel, triangle, c=None, *, clamp=True, frame=-1) -> TriangleTexture:
    """Reconstruct a triangle's texture from coefficients ``c``.

    Never-observed triangles return the mean texture of their fallback
    triangle and ignore ``c``; without a fallback they raise NoTextureError.
    """
    sub = model.subspaces[triangle]
    if sub is None:
        src = int(model.fallback[triangle])
        if src < 0:
            raise NoTextureError(f"no texture available for triangle {triangle}")
        flat = model.subspaces[src].mean
    else:
        if c is None:
            c = np.zeros(sub.n_components)
        c = np.asarray(c, dtype=float)
        if c.shape != (sub.n_components,):
            raise ParameterError(
                f"triangle {triangle}: expected {sub.n_components} coefficients, got {c.shape}")
        flat = subspace.reconstruct(sub, c)
    tex = flat.reshape(-1, 3)
    if clamp:
        tex = np.clip(tex, 0.0, 1.0)
    return TriangleTexture(tex, int(triangle), int(frame))


def synthesize_all(model: TextureModel, coeffs, *, frame=-1, default=0.5):
    """(n_triangles, N, 3) textures; ``coeffs`` maps triangle -> coefficients.
    Missing coefficients mean c = 0; triangles without any texture get
    ``default`` grey."""
    out = np.full((model.n_triangles, model.N, 3), default, dtype=float)
    for t in range(model.n_triangles):
        try:
            out[t] = synthesize_texture(model, t, coeffs.get(t), frame=frame).texels
        except NoTextureError:
            pass
    return out


# -- atlas -------------------------------------------------------------------

def atlas_layout(n_triangles, T):
    """Grid shape (rows, cols) and cell size in pixels for an atlas."""
    cell = T + 1
    cols = int(np.ceil(np.sqrt(max(n_triangles, 1))))
    rows = int(np.ceil(max(n_triangles, 1) / cols))
    return rows, cols, cell


def atlas_uvs(n_triangles, T):
    """OBJ texture coordinates (n_triangles, 3, 2) for the atlas cells.

    Inside a cell, vertex 0 sits at pixel position (1/6, 1/6) and vertices 1
    and 2 at distance T along x and y, which puts texel (i, j) exactly on the
    centre of cell pixel (i, j).
    """
    rows, cols, cell = atlas_layout(n_triangles, T)
    W, H = cols * cell, rows * cell
    t = np.arange(n_triangles)
    ox = (t % cols) * cell + 1.0 / 6.0
    oy = (t // cols) * cell + 1.0 / 6.0
    px = np.stack([ox, ox + T, ox], axis=1)
    py = np.stack([oy, oy, oy + T], axis=1)
    return np.stack([px / W, 1.0 - py / H], axis=-1)


def bake_atlas(textures, T, background=0.0):
    """Pack (n_triangles, N, 3) texel arrays into one RGB atlas image.

    Texels fill the lattice pixels i + j <= T - 1; the next diagonal copies
    its nearest lattice texel so bilinear lookups near the hypotenuse stay
    on-colour.
    """
    textures = np.asarray(textures, dtype=float)
    n = len(textures)
    rows, cols, cell = atlas_layout(n, T)
    img = np.full((rows * cell, cols * cell, 3), background, dtype=float)
    g = texel_grid(T)
    t = np.arange(n)
    ox = (t % cols) * cell
    oy = (t // cols) * cell
    r = oy[:, None] + g[None, :, 1]
    c = ox[:, None] + g[None, :, 0]
    img[r, c] = textures
    edge = np.flatnonzero(g.sum(1) == T - 1)
    for k in edge:
        i, j = g[k]
        img[oy + j + 1, ox + i] = textures[:, k]
        img[oy + j, ox + i + 1] = textures[:, k]
    return img


def unbake_atlas(img, n_triangles, T):
    """Inverse of :func:`bake_atlas` on the lattice pixels."""
    rows, cols, cell = atlas_layout(n_triangles, T)
    g = texel_grid(T)
    t = np.arange(n_triangles)
    r = (t // cols)[:, None] * cell + g[None, :, 1]
    c = (t % cols)[:, None] * cell + g[None, :, 0]
    return np.asarray(img)[r, c]


def raw_texture_bytes(model_or_schedule, T, itemsize=4):
    """Bytes of storing every per-frame visible-triangle texture raw."""
    vis = model_or_schedule.visibility if isinstance(model_or_schedule, TextureModel) \
        else _as_mask(model_or_schedule)
    return int(vis.sum()) * 3 * texel_count(T) * itemsize
