"""Deterministic synthetic capture: articulated motion of the stand-in body,
pose-driven "clothing" deformation, pose-dependent appearance and two
virtual cameras (front and back).

The deformation of part l at frame f lives in the part's local frame:

    d_l(f) = a * sum_k phi_lk(R_l(f)) B_lk + a * eta * sum_k psi_lk(R_l(f)) C_lk

where R_l is the local rotation of the part's joint, phi are standardised
low-order monomials of the rotation's axial vector, psi are higher-frequency
sinusoids of vec(R - I), and B, C are smooth vector fields over the part's
tube.
The first sum has exactly ``deform_rank`` modes; the second adds a small
higher-rank remainder so that truncation errors are not identically zero.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import axis_angle_to_matrix
from .mesh import BodyModel, Mesh, PoseParams, ShapeParams, forward_kinematics, pose_model
from .raster import look_at, surface_points, texel_barycentrics
from .standin import ELBOWS, KNEES, build_standin_model

# per-joint motion amplitudes (radians) about x, y, z
_AMPLITUDE = np.array([
    [0.12, 0.35, 0.08],  # pelvis
    [0.15, 0.15, 0.10],
    [0.12, 0.15, 0.10],
    [0.20, 0.25, 0.15],  # neck
    [0.45, 0.50, 0.45],  # shoulders
    [0.15, 0.75, 0.15],  # elbow (flex about y)
    [0.30, 0.30, 0.30],
    [0.45, 0.50, 0.45],
    [0.15, 0.75, 0.15],
    [0.30, 0.30, 0.30],
    [0.40, 0.15, 0.20],  # hips
    [0.45, 0.10, 0.10],  # knee (flex about x)
    [0.25, 0.15, 0.15],
    [0.40, 0.15, 0.20],
    [0.45, 0.10, 0.10],
    [0.25, 0.15, 0.15],
])
# neutral pose the motion oscillates around
_CENTRE = np.zeros((16, 3))
_CENTRE[ELBOWS[0], 1] = -0.9
_CENTRE[ELBOWS[1], 1] = 0.9
for _k in KNEES:
    _CENTRE[_k, 0] = 0.6
# direction of the novel-pose excursion used as the extrapolation range
_NOVEL = np.zeros((16, 3))
_NOVEL[4, 2] = 0.6
_NOVEL[7, 2] = -0.6
_NOVEL[ELBOWS[0], 1] = -0.7
_NOVEL[ELBOWS[1], 1] = 0.7
_NOVEL[10, 0] = -0.5
_NOVEL[13, 0] = -0.5
for _k in KNEES:
    _NOVEL[_k, 0] = 0.6
_NOVEL[0, 1] = 0.3


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_frames: int = 500
    image_size: int = 256
    deform_rank: int = 6
    deform_amplitude: float = 0.015  # metres, RMS per main mode
    detail_rank: int = 24
    detail_amplitude: float = 0.04  # relative to deform_amplitude
    detail_frequency: float = 10.0
    shape: tuple = (0.4, -0.2, 0.3, 0.0)
    novel_range: tuple = (220, 320)  # inclusive frame range of unseen poses
    novel_amplitude: float = 1.0
    # Gaussian sigma of target points as a fraction of the bbox diagonal
    target_noise: float = 0.0
    target_density: int = 6  # lattice side of the dense target point cloud
    camera_distance: float = 3.2
    fov_deg: float = 40.0
    shading_amplitude: float = 0.25
    wrinkle_amplitude: float = 0.08

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["novel_range"] = list(self.novel_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("shape", "novel_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def rotation_features(aa):
    """vec(R - I) for axis-angle input (..., 3) -> (..., 9)."""
    R = axis_angle_to_matrix(aa)
    return (R - np.eye(3)).reshape(R.shape[:-2] + (9,))


def motion(config: SynthConfig, rng):
    """Joint rotations (F, J, 3) and root translation (F, 3)."""
    F = config.n_frames
    f = np.arange(F, dtype=float)[:, None, None]
    J = len(_AMPLITUDE)
    poses = np.broadcast_to(_CENTRE, (F, J, 3)).copy()
    for _ in range(2):
        period = rng.uniform(45.0, 150.0, size=(J, 3))
        phase = rng.uniform(0, 2 * np.pi, size=(J, 3))
        weight = rng.uniform(0.35, 0.65, size=(J, 3))
        poses += _AMPLITUDE * weight * np.sin(2 * np.pi * f / period + phase)
    a, b = config.novel_range
    w = np.zeros(F)
    inside = (np.arange(F) >= a) & (np.arange(F) <= b)
    w[inside] = np.sin(np.pi * (np.arange(F)[inside] - a) / max(b - a, 1)) ** 2
    poses += config.novel_amplitude * w[:, None, None] * _NOVEL
    t = np.arange(F, dtype=float)
    trans = np.stack([
        0.04 * np.sin(2 * np.pi * t / 170.0),
        0.02 * np.sin(2 * np.pi * t / 60.0 + 1.0),
        0.05 * np.sin(2 * np.pi * t / 230.0 + 2.0),
    ], axis=1)
    return poses, trans


def _part_cylinder(points):
    """Axis coordinate s in [0, 1], angle, radial and tangent unit vectors and
    the axis direction of a tube given its rest points."""
    c = points.mean(axis=0)
    X = points - c
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    u = Vt[0]
    h = X @ u
    s = (h - h.min()) / max(h.max() - h.min(), 1e-12)
    rad = X - h[:, None] * u
    rad /= np.maximum(np.linalg.norm(rad, axis=1, keepdims=True), 1e-12)
    ref = Vt[1]
    ang = np.arctan2(rad @ np.cross(u, ref), rad @ ref)
    tan = np.cross(u, rad)
    return s, ang, rad, tan, u


def _random_field(rng, s, ang, rad, tan, u):
    """Smooth random vector field on a tube, unit RMS per vertex."""
    out = np.zeros((len(s), 3))
    for direction, gain in ((rad, 1.0), (tan, 0.5), (np.broadcast_to(u, rad.shape), 0.3)):
        scalar = np.zeros(len(s))
        for m in range(3):
            for p in range(3):
                c = rng.normal()
                psi = rng.uniform(0, 2 * np.pi)
                scalar += c * np.cos(m * ang + psi) * np.cos(np.pi * p * s)
        out += gain * scalar[:, None] * direction
    rms = np.sqrt(np.mean(np.sum(out ** 2, axis=1)))
    return out / max(rms, 1e-12)


_MONOMIALS = ((0,), (1,), (2,), (0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2),
              (0, 0, 0), (1, 1, 1), (2, 2, 2))
MAX_RANK = len(_MONOMIALS)


def axial(g):
    """Axial vector sin(angle) * axis from vec(R - I) (..., 9)."""
    return 0.5 * np.stack([g[..., 7] - g[..., 5], g[..., 2] - g[..., 6], g[..., 3] - g[..., 1]], -1)


def monomials(g, rank):
    w = axial(g)
    return np.stack([np.prod(w[..., list(m)], axis=-1) for m in _MONOMIALS[:rank]], -1)


@dataclass(frozen=True, eq=False)
class DeformationGenerator:
    """Per-part fields and standardised pose features of the synthetic
    deformation. Every feature is a fixed function of the joint rotation."""

    fields: tuple  # per part (rank, V_l, 3)
    detail_fields: tuple  # per part (detail_rank, V_l, 3)
    frequencies: tuple  # per part (detail_rank, 9)
    phases: tuple  # per part (detail_rank,)
    main_norm: tuple  # per part (mean, scale) arrays
    detail_norm: tuple

    def main_features(self, part, g):
        mu, sd = self.main_norm[part]
        return (monomials(g, self.fields[part].shape[0]) - mu) / sd

    def detail_features(self, part, g):
        mu, sd = self.detail_norm[part]
        return (np.sin(g @ self.frequencies[part].T + self.phases[part]) - mu) / sd


def _norm(x):
    mu = x.mean(axis=0)
    sd = np.sqrt(np.mean((x - mu) ** 2, axis=0))
    return mu, np.where(sd > 1e-12, sd, 1.0)


def make_deformation(model: BodyModel, config: SynthConfig, poses, rng) -> DeformationGenerator:
    if not 0 <= config.deform_rank <= MAX_RANK:
        raise ParameterError(f"deform_rank must lie in [0, {MAX_RANK}]")
    rest = model.template.vertices
    g_all = rotation_features(poses)
    F, D, freq, ph, mn, dn = [], [], [], [], [], []
    for l in range(model.n_parts):
        idx = model.template.part_vertices(l)
        cyl = _part_cylinder(rest[idx])
        F.append(np.stack([_random_field(rng, *cyl) for _ in range(config.deform_rank)])
                 if config.deform_rank else np.zeros((0, len(idx), 3)))
        D.append(np.stack([_random_field(rng, *cyl) for _ in range(config.detail_rank)])
                 if config.detail_rank else np.zeros((0, len(idx), 3)))
        freq.append(rng.normal(scale=config.detail_frequency, size=(config.detail_rank, 9)))
        ph.append(rng.uniform(0, 2 * np.pi, size=config.detail_rank))
        g = g_all[:, l]
        mn.append(_norm(monomials(g, config.deform_rank)))
        dn.append(_norm(np.sin(g @ freq[-1].T + ph[-1])))
    return DeformationGenerator(tuple(F), tuple(D), tuple(freq), tuple(ph), tuple(mn), tuple(dn))


def local_displacements(gen: DeformationGenerator, model: BodyModel, poses, config: SynthConfig):
    """Displacements (F, V, 3) in each vertex's part frame."""
    F = len(poses)
    V = model.template.n_vertices
    out = np.zeros((F, V, 3))
    if config.deform_amplitude == 0:
        return out
    g_all = rotation_features(poses)  # (F, J, 9)
    for l in range(model.n_parts):
        idx = model.template.part_vertices(l)
        g = g_all[:, l]
        d = np.zeros((F, len(idx), 3))
        if config.deform_rank:
            d += np.einsum("fk,kvc->fvc", gen.main_features(l, g), gen.fields[l])
        if config.detail_rank and config.detail_amplitude:
            d += config.detail_amplitude * np.einsum(
                "fk,kvc->fvc", gen.detail_features(l, g), gen.detail_fields[l])
        out[:, idx] = config.deform_amplitude * d
    return out


@dataclass(frozen=True, eq=False)
class Appearance:
    base: np.ndarray  # (J, 3) part colours
    waves: np.ndarray  # (2, 3) wave vectors (cycles per metre)
    wave_phase: np.ndarray  # (2, 3) per channel
    shade: np.ndarray  # (J, 9) shading direction over vec(R - I)
    axes: np.ndarray  # (J, 3) bone axis at rest
    shading_amplitude: float
    wrinkle_amplitude: float

    def albedo(self, p, part):
        col = self.base[part].copy()
        for k in range(len(self.waves)):
            col += 0.12 / (k + 1) * np.sin(2 * np.pi * (p @ self.waves[k])[:, None] + self.wave_phase[k])
        return col

    def colour(self, p, part, g, wrinkle):
        """RGB for rest points ``p`` on parts ``part`` given per-joint pose
        features ``g`` (J, 9) and a per-joint wrinkle drive (J,)."""
        shade = 1.0 + self.shading_amplitude * np.tanh(np.einsum("jk,jk->j", self.shade, g))
        along = np.einsum("nc,nc->n", p, self.axes[part])
        w = self.wrinkle_amplitude * wrinkle[part] * np.cos(2 * np.pi * 9.0 * along)
        return np.clip(self.albedo(p, part) * shade[part][:, None] + w[:, None], 0.0, 1.0)


def make_appearance(model: BodyModel, config: SynthConfig, rng) -> Appearance:
    J = model.n_joints
    base = rng.uniform(0.3, 0.75, size=(J, 3))
    waves = rng.normal(size=(2, 3))
    waves *= rng.uniform(2.0, 5.0, size=(2, 1)) / np.linalg.norm(waves, axis=1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, size=(2, 3))
    shade = rng.normal(size=(J, 9))
    shade /= np.linalg.norm(shade, axis=1, keepdims=True)
    axes = np.zeros((J, 3))
    for l in range(J):
        idx = model.template.part_vertices(l)
        axes[l] = _part_cylinder(model.template.vertices[idx])[4]
    return Appearance(base, waves, phase, shade * 2.0, axes,
                      config.shading_amplitude, config.wrinkle_amplitude)


def default_cameras(config: SynthConfig, target=(0.0, 0.9, 0.0)):
    t = np.asarray(target, dtype=float)
    d = config.camera_distance
    n = config.image_size
    front = look_at(t + [0, 0, d], t, (0, 1, 0), width=n, height=n, fov_deg=config.fov_deg)
    back = look_at(t - [0, 0, d], t, (0, 1, 0), width=n, height=n, fov_deg=config.fov_deg)
    return [front, back]


@dataclass(frozen=True, eq=False)
class SynthSequence:
    config: SynthConfig
    model: BodyModel
    poses: np.ndarray  # (F, J, 3)
    translations: np.ndarray  # (F, 3)
    shape: np.ndarray  # (K,)
    naked: np.ndarray  # (F, V, 3) M'
    clothed: np.ndarray  # (F, V, 3) M
    cameras: list
    appearance: Appearance
    deformation: DeformationGenerator
    local: np.ndarray = field(repr=False, default=None)  # (F, V, 3) local displacements

    @property
    def n_frames(self):
        return len(self.poses)

    def pose(self, f) -> PoseParams:
        return PoseParams(self.poses[f], self.translations[f])

    def shape_params(self) -> ShapeParams:
        return ShapeParams(self.shape)

    def statistic_mesh(self, f) -> Mesh:
        return self.model.template.with_vertices(self.naked[f])

    def clothed_mesh(self, f) -> Mesh:
        return self.model.template.with_vertices(self.clothed[f])

    def target_mesh(self, f) -> Mesh:
        """Noise-free target: the clothed mesh itself."""
        return self.clothed_mesh(f)

    def target_cloud(self, f) -> np.ndarray:
        """Sensor-like target: vertices plus a dense barycentric sampling of
        every triangle of M, each point with independent Gaussian noise."""
        mesh = self.clothed_mesh(f)
        bary = texel_barycentrics(self.config.target_density)
        pts = np.einsum("kc,ncd->nkd", bary, mesh.vertices[mesh.triangles]).reshape(-1, 3)
        pts = np.concatenate([mesh.vertices, pts])
        if self.config.target_noise > 0:
            rng = np.random.default_rng([self.config.seed, 1, f])
            sigma = self.config.target_noise * self.model.template.bbox_diagonal()
            pts = pts + rng.normal(scale=sigma, size=pts.shape)
        return pts

    def target(self, f):
        """Target for registration: the mesh when noise-free, else the cloud."""
        return self.target_cloud(f) if self.config.target_noise > 0 else self.target_mesh(f)

    def render(self, f, camera_index):
        """Float RGB image of frame f from one camera."""
        cam = self.cameras[camera_index]
        mesh = self.clothed_mesh(f)
        ids, bary = surface_points(mesh, cam)
        img = np.zeros((cam.height, cam.width, 3))
        hit = ids >= 0
        tri = ids[hit]
        corners = self.model.template.vertices[self.model.template.triangles[tri]]
        p = np.einsum("nk,nkc->nc", bary[hit], corners)
        part = self.model.template.part_of_vertex[self.model.template.triangles[tri, 0]]
        g = rotation_features(self.poses[f])
        wrinkle = self.wrinkle_drive(f)
        img[hit] = self.appearance.colour(p, part, g, wrinkle)
        return img

    def wrinkle_drive(self, f):
        """Per-part scalar in (-1, 1) following the first deformation mode."""
        g = rotation_features(self.poses[f])
        out = np.zeros(self.model.n_parts)
        for l in range(self.model.n_parts):
            if self.deformation.fields[l].shape[0]:
                out[l] = np.tanh(self.deformation.main_features(l, g[l])[0])
        return out

    def image(self, f, camera_index):
        """8-bit RGB image of frame f from one camera (rendered on demand)."""
        return np.round(self.render(f, camera_index) * 255.0).astype(np.uint8)


def generate(config: SynthConfig = SynthConfig(), model: BodyModel | None = None) -> SynthSequence:
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = build_standin_model()
    poses, trans = motion(config, rng)
    gen = make_deformation(model, config, poses, rng)
    app = make_appearance(model, config, rng)
    shape = np.zeros(model.n_shapes)
    k = min(len(config.shape), model.n_shapes)
    shape[:k] = config.shape[:k]
    sp = ShapeParams(shape)
    F, V = len(poses), model.template.n_vertices
    naked = np.zeros((F, V, 3))
    clothed = np.zeros((F, V, 3))
    local = local_displacements(gen, model, poses, config)
    labels = model.template.part_of_vertex
    for f in range(F):
        pose = PoseParams(poses[f], trans[f])
        naked[f] = pose_model(model, pose, sp).vertices
        G = forward_kinematics(model.skeleton, pose)
        # world displacement = bone rotation applied to the local one
        clothed[f] = naked[f] + np.einsum("vab,vb->va", G[labels, :3, :3], local[f])
    return SynthSequence(config, model, poses, trans, shape, naked, clothed,
                         default_cameras(config), app, gen, local)


def holdout_frames(n_frames, novel_range=(220, 320), gap=3, every=25):
    """(interpolation frames, extrapolation frames).

    Interpolation frames are short gaps spread over the sequence outside the
    novel range; extrapolation frames are the novel range itself.
    """
    a, b = novel_range
    extra = np.arange(max(a, 0), min(b, n_frames - 1) + 1)
    interp = []
    for start in range(every // 2, n_frames - gap, every):
        block = np.arange(start, start + gap)
        if np.any((block >= a - gap) & (block <= b + gap)):
            continue
        interp.extend(block.tolist())
    return np.array(interp, dtype=np.int64), extra
