"""End-to-end encode / decode / evaluate over a registered sequence."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, archive as arc, deform, evaluation, regress, texture
from .errors import EigenAvatarError, ParameterError
from .mesh import BodyModel, Mesh, PoseParams, ShapeParams, part_frames, pose_model
from .raster import default_epsilon
from .regress import RegressorSet, TextureGroup, TextureHead, TrainConfig

DECODE_MODES = ("stored", "regressed")
TEXTURE_MODES = ("part", "triangle")


@contextmanager
def stage(name):
    """Prefix package errors raised inside with the pipeline stage."""
    try:
        yield
    except EigenAvatarError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            if exc.args:
                exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


@dataclass(frozen=True)
class EncodeConfig:
    L: int = 10
    T: int = 16
    eps: float | None = None  # visibility threshold; None: 1e-3 x bbox diagonal
    deform_train: TrainConfig = TrainConfig()
    # texture heads are many outputs per network; fewer steps keep encode tractable
    texture_train: TrainConfig = TrainConfig(iterations=800)
    texture_mode: str = "part"
    texture: bool = True
    store_texture_coeffs: bool = False
    # frames the subspaces and regressors are fitted on; None: every frame
    train_frames: tuple | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError("L must be at least 1")
        if self.T < 1:
            raise ParameterError("T must be at least 1")
        if self.texture_mode not in TEXTURE_MODES:
            raise ParameterError(f"texture_mode must be one of {TEXTURE_MODES}")

    def to_dict(self):
        d = asdict(self)
        if d["train_frames"] is not None:
            d["train_frames"] = [int(f) for f in d["train_frames"]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("deform_train", "texture_train"):
            if isinstance(d.get(key), dict):
                d[key] = TrainConfig(**d[key])
        if d.get("train_frames") is not None:
            d["train_frames"] = tuple(int(f) for f in d["train_frames"])
        return cls(**d)


@dataclass(eq=False)
class SequenceData:
    """What the encoder consumes: a registered sequence and its images."""

    model: BodyModel
    poses: np.ndarray  # (F, J, 3)
    translations: np.ndarray  # (F, 3)
    shape: np.ndarray  # (K,)
    meshes: np.ndarray  # (F, V, 3) registered clothed vertices M
    cameras: list = field(default_factory=list)
    images: object = None  # images(f, c) -> (H, W, 3) or nested list
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float)
        self.translations = np.asarray(self.translations, dtype=float)
        self.shape = np.asarray(self.shape, dtype=float)
        self.meshes = np.asarray(self.meshes, dtype=float)
        F = len(self.poses)
        if F == 0:
            raise ParameterError("empty sequence")
        if self.translations.shape != (F, 3) or self.meshes.shape[0] != F:
            raise ParameterError("poses, translations and meshes disagree on frame count")
        if self.meshes.shape[1:] != (self.model.template.n_vertices, 3):
            raise ParameterError("registered meshes must have the template's vertex count")

    @property
    def n_frames(self):
        return len(self.poses)

    def pose(self, f):
        return PoseParams(self.poses[f], self.translations[f])

    def mesh(self, f) -> Mesh:
        return self.model.template.with_vertices(self.meshes[f])

    def statistic_mesh(self, f) -> Mesh:
        return pose_model(self.model, self.pose(f), ShapeParams(self.shape))

    @classmethod
    def from_synth(cls, seq):
        """Ground-truth registration of a synthetic sequence."""
        return cls(seq.model, seq.poses, seq.translations, seq.shape, seq.clothed,
                   list(seq.cameras), seq.image, {"synth": seq.config.seed})

    @classmethod
    def from_registration(cls, model, result, cameras=(), images=None, seeds=None):
        poses = np.stack([p.rotations for p in result.poses])
        trans = np.stack([p.translation for p in result.poses])
        meshes = np.stack([m.vertices for m in result.meshes])
        return cls(model, poses, trans, result.shape.coefficients, meshes, list(cameras),
                   images, dict(seeds or {}))


def _train_frames(config: EncodeConfig, F):
    if config.train_frames is None:
        return np.arange(F)
    fr = np.unique(np.asarray(config.train_frames, dtype=np.int64))
    if fr.size == 0 or fr[0] < 0 or fr[-1] >= F:
        raise ParameterError(f"training frames must lie in [0, {F})")
    return fr


def deformation_fields(data: SequenceData):
    shape = ShapeParams(data.shape)
    out = []
    for f in range(data.n_frames):
        pose = data.pose(f)
        Mp = pose_model(data.model, pose, shape)
        out.append(deform.displacement_field(data.mesh(f), Mp, part_frames(data.model, pose), f))
    return out


def _texture_regressors(model: texture.TextureModel, tracks, train, feats, rest: Mesh,
                        config: EncodeConfig):
    """Per part (or per triangle) networks whose outputs hold every
    triangle's texture coefficients, trained on observed frames only."""
    parts = texture.triangle_parts(rest)
    dims = model.dims()
    in_train = np.zeros(len(feats), dtype=bool)
    in_train[train] = True
    if config.texture_mode == "part":
        groups = [(int(p), np.flatnonzero((parts == p) & (np.array(dims) > 0)))
                  for p in np.unique(parts)]
    else:
        groups = [(int(parts[t]), np.array([t])) for t in range(model.n_triangles) if dims[t] > 0]
    out = []
    for joint, tris in groups:
        if tris.size == 0:
            continue
        heads, start = [], 0
        for t in tris:
            heads.append(TextureHead(int(t), start, start + dims[t]))
            start += dims[t]
        Y = np.zeros((len(train), start))
        mask = np.zeros_like(Y)
        row = np.full(len(feats), -1)
        row[train] = np.arange(len(train))
        for h in heads:
            tr = tracks[h.triangle]
            keep = in_train[tr.frames]
            if not keep.any():
                continue
            sub = model.subspaces[h.triangle]
            P = tr.textures[keep].reshape(int(keep.sum()), -1).astype(float).T
            C = sub.embed(P).T if P.size else np.zeros((0, dims[h.triangle]))
            r = row[tr.frames[keep]]
            Y[r, h.start:h.stop] = C
            mask[r, h.start:h.stop] = 1.0
        if not mask.any():
            continue
        res = regress.train(feats[train, joint], Y, config.texture_train, mask)
        out.append(TextureGroup(joint, res.regressor, tuple(heads)))
    return tuple(out)


def encode(data: SequenceData, config: EncodeConfig = EncodeConfig(), log=None) -> arc.Archive:
    """Fit the deformation and texture subspaces and their regressors."""
    say = log or (lambda msg: None)
    timing = {}
    F = data.n_frames
    train = _train_frames(config, F)
    model = data.model
    feats = regress.pose_features(data.poses)  # (F, J, 9)

    t0 = time.perf_counter()
    with stage("deformation"):
        fields = deformation_fields(data)
        pv = deform.part_index_lists(model.template, model.n_joints)
        dmodel = deform.fit_deform_model([fields[f] for f in train], config.L, pv)
        coeffs = [np.stack([dmodel.subspaces[l].embed(fields[f].parts[l]) for f in range(F)])
                  for l in range(dmodel.n_parts)]
    timing["deform_fit"] = time.perf_counter() - t0
    say(f"deformation subspaces: dims {dmodel.dims()}")

    t0 = time.perf_counter()
    with stage("deformation regressors"):
        joints = tuple(range(dmodel.n_parts))
        dregs = tuple(regress.train(feats[train, j], coeffs[l][train], config.deform_train).regressor
                      for l, j in enumerate(joints))
    timing["deform_train"] = time.perf_counter() - t0

    tgroups, tcoeffs = (), None
    if config.texture and data.cameras and data.images is not None:
        t0 = time.perf_counter()
        with stage("texture"):
            eps = config.eps if config.eps is not None else default_epsilon(data.mesh(0))
            meshes = [data.mesh(f) for f in range(F)]
            tracks, schedule = texture.build_tracks(meshes, data.cameras, data.images, eps, config.T)
            keep_tracks = []
            in_train = np.zeros(F, dtype=bool)
            in_train[train] = True
            for tr in tracks:
                k = in_train[tr.frames]
                keep_tracks.append(texture.TextureTrack(tr.triangle, tr.frames[k], tr.textures[k]))
            tmodel = texture.fit_texture_model(keep_tracks, config.L, T=config.T,
                                               visibility=schedule >= 0, rest_mesh=model.template)
            tmodel = arc.quantize_texture(tmodel)
        timing["texture_fit"] = time.perf_counter() - t0
        say(f"texture subspaces: {int(tmodel.observed().sum())} of {tmodel.n_triangles} triangles")
        t0 = time.perf_counter()
        with stage("texture regressors"):
            tgroups = _texture_regressors(tmodel, keep_tracks, train, feats, model.template, config)
        timing["texture_train"] = time.perf_counter() - t0
        if config.store_texture_coeffs:
            tcoeffs = {}
            for tr in tracks:
                sub = tmodel.subspaces[tr.triangle]
                if sub is None or tr.empty:
                    continue
                P = tr.textures.reshape(len(tr), -1).astype(float).T
                tcoeffs[tr.triangle] = (tr.frames, sub.embed(P).T.astype(np.float32))
        del tracks, keep_tracks
    else:
        n_tri = model.template.n_triangles
        tmodel = texture.TextureModel(tuple([None] * n_tri), config.T,
                                      np.zeros((F, n_tri), dtype=bool), np.full(n_tri, -1))
    manifest = {
        "format": "eigenavatar archive",
        "package_version": __version__,
        "frames": F,
        "units": "m",
        "T": config.T,
        "eps": None if not tmodel.observed().any() else float(
            config.eps if config.eps is not None else default_epsilon(data.mesh(0))),
        "seeds": {k: int(v) for k, v in data.seeds.items()},
        "encode": config.to_dict(),
        "train_frames": int(len(train)),
    }
    return arc.Archive(model, data.poses, data.translations, data.shape, dmodel, coeffs,
                       tmodel, RegressorSet(dregs, joints, tgroups), manifest, tcoeffs)


@dataclass(eq=False)
class Decoded:
    mesh: Mesh  # clothed M
    statistic: Mesh  # naked M'
    textures: np.ndarray  # (n_triangles, N, 3)
    deform_coeffs: list
    texture_coeffs: dict


def decode(ar: arc.Archive, frame=None, pose: PoseParams | None = None, mode="stored",
           textures=True) -> Decoded:
    """Reconstruct one frame.

    ``stored`` uses the archived coefficients of ``frame``; ``regressed``
    predicts them from the pose (``pose`` if given, else the archived pose of
    ``frame``). Texture coefficients come from the archive when stored there,
    and from the regressors otherwise.
    """
    if mode not in DECODE_MODES:
        raise ParameterError(f"mode must be one of {DECODE_MODES}")
    if frame is not None and not 0 <= frame < ar.n_frames:
        raise ParameterError(f"frame {frame} outside [0, {ar.n_frames})")
    if pose is None:
        if frame is None:
            raise ParameterError("decode needs a frame or a pose")
        pose = PoseParams(ar.poses[frame], ar.translations[frame])
    if mode == "stored" and frame is None:
        raise ParameterError("stored mode needs a frame")
    with stage("decode"):
        shape = ShapeParams(ar.shape)
        Mp = pose_model(ar.model, pose, shape)
        H = part_frames(ar.model, pose)
        need_regress = mode == "regressed" or (textures and ar.texture_coeffs is None)
        if need_regress:
            dpred, tpred = regress.regress_frame(ar.regressors, pose.rotations)
        if mode == "stored":
            dc = [c[frame] for c in ar.deform_coeffs]
        else:
            dc = dpred
        M = deform.apply_displacements(Mp, dc, ar.deform, H)
        tc, tex = {}, None
        if textures:
            if need_regress:
                tc.update(tpred)
            if mode == "stored" and ar.texture_coeffs is not None:
                for t, (frames, c) in ar.texture_coeffs.items():
                    k = np.searchsorted(frames, frame)
                    if k < len(frames) and frames[k] == frame:
                        tc[t] = c[k]
            tex = texture.synthesize_all(ar.texture, tc, frame=-1 if frame is None else frame)
    return Decoded(M, Mp, tex, dc, tc)


def reconstruct_vertices(ar: arc.Archive, frames, mode="stored") -> np.ndarray:
    """(n, V, 3) clothed vertices for archived frames, without textures."""
    return np.stack([decode(ar, int(f), mode=mode, textures=False).mesh.vertices for f in frames])


def compression(ar: arc.Archive, archive_bytes=None) -> evaluation.CompressionReport:
    sizes = arc.section_sizes(ar)
    total = len(arc.to_bytes(ar)) if archive_bytes is None else archive_bytes
    F, V = ar.n_frames, ar.model.template.n_vertices
    vertex_bytes = F * V * 3 * 4
    tex_bytes = texture.raw_texture_bytes(ar.texture, ar.texture.T)
    deform_bytes = sizes["deform"] + sizes["deform_coeffs"] + sizes["frames"]
    return evaluation.CompressionReport(total, vertex_bytes, tex_bytes, deform_bytes)


def evaluate(ar: arc.Archive, truth, frames=None, mode="stored", Ls=(3, 5, 10),
             trace_parts=(0,)) -> evaluation.EvalReport:
    """Error of decoded meshes against ground-truth vertices ``truth`` (F, V, 3)."""
    truth = np.asarray(truth, dtype=float)
    frames = np.arange(ar.n_frames) if frames is None else np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ParameterError("no frames to evaluate")
    if frames.min() < 0 or frames.max() >= min(ar.n_frames, len(truth)):
        raise ParameterError("evaluation frames missing from the archive or ground truth")
    t0 = time.perf_counter()
    rec = reconstruct_vertices(ar, frames, mode)
    rep = evaluation.error_report(rec, truth[frames], ar.model.template.part_of_vertex, frames,
                                  ar.deform.n_parts)
    rep.timing["decode"] = time.perf_counter() - t0
    rep.contribution_L = tuple(Ls)
    rep.contribution = evaluation.contribution_table(ar.deform.subspaces, Ls)
    rep.compression = compression(ar)
    pred = regress.regress_sequence(ar.regressors, ar.poses[frames])
    for l in trace_parts:
        rep.traces[f"part{l}"] = evaluation.coefficient_trace(
            frames, ar.deform_coeffs[l][frames], pred[l])
    return rep


def with_L(config: EncodeConfig, L) -> EncodeConfig:
    return replace(config, L=int(L))
