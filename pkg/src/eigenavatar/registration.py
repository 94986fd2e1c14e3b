"""Fitting the body model to target meshes or point clouds.

The registration energy is a sum of squares E = |r|^2 over the residual
blocks

    sqrt(alpha) (x'_i - x_i)           anchors
    sqrt(beta)  (y'_j - y_j)           correspondences
    sqrt(w_P)   hinge(theta - limits)  joint limits
    sqrt(w_R)   log(R_prev^T R_j)      temporal change per joint
    sqrt(w_S)   v                      shape magnitude
    sqrt(w_E)   (s_a - s_b)            edge smoothness of a free-form field s

and is minimised over (Theta, root translation, v) by damped Gauss-Newton.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, OptimizationError, ParameterError
from .geometry import (axis_angle_to_matrix, canonical_axis_angle, matrix_to_axis_angle,
                       right_jacobian, right_jacobian_inv)
from .mesh import BodyModel, Mesh, PoseParams, ShapeParams, pose_jacobian, pose_model
from .meshio import atomic_write_text
from .raster import texel_barycentrics

STAGES = ("boundary", "supersampled")


@dataclass(frozen=True, eq=False)
class AnchorSet:
    indices: np.ndarray  # (n,) model vertex indices
    targets: np.ndarray  # (n, 3)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(idx) != len(tgt):
            raise ParameterError("anchor indices and targets differ in length")
        if np.any(idx < 0):
            raise ParameterError("anchor indices must be non-negative")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "targets", tgt)

    def __len__(self):
        return len(self.indices)

    def check(self, n_vertices):
        if np.any(self.indices >= n_vertices):
            raise ParameterError(f"anchor index out of range for {n_vertices} vertices")


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Model surface points (triangle + barycentrics) paired with target points."""

    triangles: np.ndarray  # (n,)
    bary: np.ndarray  # (n, 3)
    targets: np.ndarray  # (n, 3)

    def __post_init__(self):
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1)
        bary = np.asarray(self.bary, dtype=float).reshape(-1, 3)
        tgt = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if not (len(tri) == len(bary) == len(tgt)):
            raise ParameterError("correspondence arrays differ in length")
        if np.any(bary < -1e-12) or not np.allclose(bary.sum(1), 1.0, atol=1e-9):
            raise ParameterError("barycentric coordinates must be non-negative and sum to 1")
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "bary", bary)
        object.__setattr__(self, "targets", tgt)

    def __len__(self):
        return len(self.triangles)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)))

    def model_points(self, mesh: Mesh):
        corners = mesh.vertices[mesh.triangles[self.triangles]]
        return np.einsum("nk,nkc->nc", self.bary, corners)

    def with_targets(self, targets):
        return CorrespondenceSet(self.triangles, self.bary, targets)


def _default_limits():
    from .standin import default_joint_limits
    return default_joint_limits()


@dataclass(frozen=True)
class RegistrationConfig:
    alpha: float = 10.0
    beta: float = 1.0
    # joint index -> (lower, upper) axis-angle component limits
    joint_limits: dict = field(default_factory=_default_limits)
    limit_weight: float = 1e3
    temporal_weight: float = 0.1
    shape_weight: float = 1e-4
    smooth_weight: float = 1.0
    max_iterations: int = 100
    tolerance: float = 1e-8
    density: int = 2  # super-sample lattice side per triangle
    rebuild_every: int = 5
    refine_iterations: int = 2
    boundary_view: tuple = (0.0, 0.0, 1.0)
    boundary_threshold: float = 0.35
    initial_damping: float = 1e-3
    # also pull every target point towards its nearest model sample
    symmetric: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "limit_weight", "temporal_weight", "shape_weight",
                     "smooth_weight"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.tolerance <= 0:
            raise ParameterError("tolerance must be > 0")
        if self.max_iterations < 0 or self.density < 1 or self.rebuild_every < 1:
            raise ParameterError("iteration counts and density must be positive")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "joint_limits"}
        d["boundary_view"] = list(self.boundary_view)
        d["joint_limits"] = {str(j): [np.asarray(lo).tolist(), np.asarray(hi).tolist()]
                             for j, (lo, hi) in self.joint_limits.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "joint_limits" in d:
            d["joint_limits"] = {int(j): (np.array(lo, float), np.array(hi, float))
                                 for j, (lo, hi) in d["joint_limits"].items()}
        if "boundary_view" in d:
            d["boundary_view"] = tuple(d["boundary_view"])
        return cls(**d)


@dataclass
class RegistrationResult:
    poses: list  # PoseParams per frame
    shape: ShapeParams
    meshes: list  # registered mesh M per frame
    traces: list  # per frame, energies of accepted steps of the final stage
    stage_traces: list = field(default_factory=list)  # per frame {stage: trace}

    def all_traces(self):
        return [t for st in self.stage_traces for t in st.values()]

    def report(self) -> dict:
        return {
            "schema": "eigenavatar.registration_report",
            "version": 1,
            "shape": self.shape.coefficients.tolist(),
            "frames": [
                {
                    "frame": f,
                    "rotations": p.rotations.tolist(),
                    "translation": p.translation.tolist(),
                    "energy_trace": list(map(float, t)),
                    "stages": {k: list(map(float, v)) for k, v in
                               (self.stage_traces[f] if f < len(self.stage_traces) else {}).items()},
                }
                for f, (p, t) in enumerate(zip(self.poses, self.traces))
            ],
        }


@dataclass
class EnergyValue:
    value: float
    gradient_rotations: np.ndarray  # (J, 3)
    gradient_translation: np.ndarray  # (3,)
    gradient_shape: np.ndarray  # (K,)
    terms: dict

    @property
    def gradient(self):
        return np.concatenate([self.gradient_rotations.ravel(), self.gradient_translation,
                               self.gradient_shape])


# -- parameter packing --------------------------------------------------------

def pack(pose: PoseParams, shape: ShapeParams | None, n_shapes):
    v = np.zeros(n_shapes) if shape is None else shape.coefficients
    return np.concatenate([pose.rotations.ravel(), pose.translation, v])


def unpack(x, n_joints):
    x = np.asarray(x, dtype=float)
    rot = x[: 3 * n_joints].reshape(n_joints, 3)
    trans = x[3 * n_joints: 3 * n_joints + 3]
    return PoseParams(rot, trans), ShapeParams(x[3 * n_joints + 3:])


# -- residuals ------------------------------------------------------------------

@dataclass
class _Problem:
    model: BodyModel
    config: RegistrationConfig
    anchors: AnchorSet | None = None
    corr: CorrespondenceSet | None = None
    theta_prev: np.ndarray | None = None
    displacements: np.ndarray | None = None  # (V, 3) free-form field s
    use_anchors: bool = True
    # cached sparse operator for the current correspondence set
    _op_for: object = None
    _op: tuple = None


def _limit_arrays(config, n_joints):
    lo = np.full((n_joints, 3), -np.inf)
    hi = np.full((n_joints, 3), np.inf)
    for j, (a, b) in config.joint_limits.items():
        if 0 <= int(j) < n_joints:
            lo[int(j)] = a
            hi[int(j)] = b
    return lo, hi


def _blocks(prob: _Problem, x, want_jac=True):
    """Posed state plus every residual block except the correspondences.

    Returns (verts, Jv, blocks) with blocks a list of (name, r, J or None).
    """
    model, cfg = prob.model, prob.config
    nJ, K = model.n_joints, model.n_shapes
    n_par = 3 * nJ + 3 + K
    pose, shape = unpack(x, nJ)
    if want_jac:
        verts, Jv = pose_jacobian(model, pose, shape)
    else:
        verts, Jv = pose_model(model, pose, shape).vertices, None
    if prob.displacements is not None:
        verts = verts + prob.displacements
    out = []

    if prob.use_anchors and prob.anchors is not None and len(prob.anchors):
        a = prob.anchors
        w = np.sqrt(cfg.alpha)
        out.append(("anchor", (w * (verts[a.indices] - a.targets)).ravel(),
                    w * Jv[a.indices].reshape(-1, n_par) if want_jac else None))

    lo, hi = _limit_arrays(cfg, nJ)
    if cfg.limit_weight > 0 and np.isfinite(lo).any() | np.isfinite(hi).any():
        w = np.sqrt(cfg.limit_weight)
        th = pose.rotations
        over = np.maximum(th - hi, 0.0) + np.minimum(th - lo, 0.0)
        Jp = None
        if want_jac:
            Jp = np.zeros((3 * nJ, n_par))
            active = np.flatnonzero((over != 0).ravel())
            Jp[active, active] = w
        out.append(("limits", w * over.ravel(), Jp))

    if prob.theta_prev is not None and cfg.temporal_weight > 0:
        w = np.sqrt(cfg.temporal_weight)
        Rp = axis_angle_to_matrix(prob.theta_prev)
        R = axis_angle_to_matrix(pose.rotations)
        phi = matrix_to_axis_angle(np.swapaxes(Rp, 1, 2) @ R)  # (J, 3)
        Jt = None
        if want_jac:
            Jt = np.zeros((3 * nJ, n_par))
            D = right_jacobian_inv(phi) @ right_jacobian(pose.rotations)
            for j in range(nJ):
                Jt[3 * j:3 * j + 3, 3 * j:3 * j + 3] = w * D[j]
        out.append(("temporal", w * phi.ravel(), Jt))

    if K and cfg.shape_weight > 0:
        w = np.sqrt(cfg.shape_weight)
        Js = None
        if want_jac:
            Js = np.zeros((K, n_par))
            Js[:, 3 * nJ + 3:] = w * np.eye(K)
        out.append(("shape", w * shape.coefficients, Js))

    if prob.displacements is not None and cfg.smooth_weight > 0:
        e = model.template.edges()
        sd = prob.displacements
        w = np.sqrt(cfg.smooth_weight)
        out.append(("smoothness", w * (sd[e[:, 0]] - sd[e[:, 1]]).ravel(),
                    np.zeros((3 * len(e), n_par)) if want_jac else None))
    return verts, Jv, out


def _corr_residual(prob: _Problem, verts):
    B, _ = _corr_operator(prob)
    return np.sqrt(prob.config.beta) * (B @ verts - prob.corr.targets)


def _residuals(prob: _Problem, x, want_jac=True):
    """Residual vector, dense Jacobian (or None) and per-term energies."""
    n_par = len(x)
    verts, Jv, blocks = _blocks(prob, x, want_jac)
    if prob.corr is not None and len(prob.corr):
        rc = _corr_residual(prob, verts).ravel()
        Jc = None
        if want_jac:
            tv = prob.model.template.triangles[prob.corr.triangles]
            Jc = np.sqrt(prob.config.beta) * np.einsum(
                "nk,nkcp->ncp", prob.corr.bary, Jv[tv]).reshape(-1, n_par)
        blocks.insert(1 if blocks and blocks[0][0] == "anchor" else 0, ("correspondence", rc, Jc))
    r = np.concatenate([b[1] for b in blocks]) if blocks else np.zeros(0)
    J = None
    if want_jac:
        J = np.concatenate([b[2] for b in blocks]) if blocks else np.zeros((0, n_par))
    terms = {name: float(np.dot(rb, rb)) for name, rb, _ in blocks}
    return r, J, terms


def _corr_operator(prob: _Problem):
    """Sparse B (n x V) with B @ verts = correspondence model points, and B^T B."""
    c = prob.corr
    if prob._op_for is not c:
        n, V = len(c), prob.model.template.n_vertices
        tv = prob.model.template.triangles[c.triangles]
        # copies: sum_duplicates sorts in place and would permute c.bary
        B = sparse.csr_matrix((c.bary.ravel().copy(), tv.ravel().copy(),
                               np.arange(0, 3 * n + 1, 3)), shape=(n, V))
        B.sum_duplicates()
        prob._op = (B, (B.T @ B).tocsr())
        prob._op_for = c
    return prob._op


def _normal(prob: _Problem, x):
    """(E, J^T J, J^T r) without forming the correspondence Jacobian.

    The correspondence rows are B Jv per coordinate, so their contribution
    to the normal equations is Jv^T (B^T B) Jv, which costs O(V) instead of
    O(number of correspondences).
    """
    verts, Jv, blocks = _blocks(prob, x, True)
    n_par = len(x)
    A = np.zeros((n_par, n_par))
    g = np.zeros(n_par)
    E = 0.0
    for _, rb, Jb in blocks:
        E += float(rb @ rb)
        A += Jb.T @ Jb
        g += Jb.T @ rb
    if prob.corr is not None and len(prob.corr):
        beta = prob.config.beta
        B, BtB = _corr_operator(prob)
        rc = _corr_residual(prob, verts)
        E += float(np.sum(rc * rc))
        Btr = B.T @ rc  # (V, 3)
        for c in range(3):
            Jc = Jv[:, c, :]
            A += beta * (Jc.T @ (BtB @ Jc))
            g += np.sqrt(beta) * (Jc.T @ Btr[:, c])
    return E, A, g


def _energy_only(prob: _Problem, x):
    verts, _, blocks = _blocks(prob, x, False)
    E = sum(float(rb @ rb) for _, rb, _ in blocks)
    if prob.corr is not None and len(prob.corr):
        rc = _corr_residual(prob, verts)
        E += float(np.sum(rc * rc))
    return E


def energy(model: BodyModel, pose: PoseParams, shape: ShapeParams | None,
           anchors: AnchorSet | None, correspondences: CorrespondenceSet | None,
           theta_prev=None, config: RegistrationConfig = None, displacements=None) -> EnergyValue:
    """Registration energy and its analytic gradient with respect to the joint
    rotations, the root translation and the shape coefficients."""
    config = config or RegistrationConfig()
    if anchors is not None:
        anchors.check(model.template.n_vertices)
    if correspondences is not None and len(correspondences):
        if np.any(correspondences.triangles >= model.template.n_triangles) or \
                np.any(correspondences.triangles < 0):
            raise ParameterError("correspondence triangle index out of range")
    prob = _Problem(model, config, anchors, correspondences,
                    None if theta_prev is None else np.asarray(
                        theta_prev.rotations if isinstance(theta_prev, PoseParams) else theta_prev,
                        dtype=float),
                    None if displacements is None else np.asarray(displacements, dtype=float))
    x = pack(pose, shape, model.n_shapes)
    r, J, terms = _residuals(prob, x)
    g = 2.0 * J.T @ r
    nJ = model.n_joints
    return EnergyValue(float(r @ r), g[:3 * nJ].reshape(nJ, 3), g[3 * nJ:3 * nJ + 3],
                       g[3 * nJ + 3:], terms)


# -- optimiser ------------------------------------------------------------------

def _optimize(prob: _Problem, x0, free, rebuild=None, label="fit"):
    """Damped Gauss-Newton over the parameters selected by ``free``.

    ``rebuild(x)`` returns fresh correspondences for the current estimate; it
    is called every ``rebuild_every`` iterations and whenever the steps for the
    current pairing stall, and the run only ends when re-pairing no longer
    lowers the energy. Re-pairing a fixed model point set to its nearest
    target points never raises the energy. Returns (x, trace).
    """
    cfg = prob.config
    x = np.array(x0, dtype=float)
    E, A, g = _normal(prob, x)
    if not np.isfinite(E):
        raise OptimizationError(f"{label}: non-finite initial energy", [E])
    trace = [E]
    # energies below this are round-off of an exact fit and cannot be ranked
    floor = 1e-24 * prob.model.template.bbox_diagonal() ** 2
    lam = cfg.initial_damping
    idx = np.flatnonzero(free)
    since_rebuild = 0
    for it in range(cfg.max_iterations):
        if E <= floor:
            break
        Af = A[np.ix_(idx, idx)]
        gf = g[idx]
        diag = np.diag(Af).copy()
        diag = np.where(diag > 0, diag, 1.0)
        accepted = False
        while True:
            try:
                step = np.linalg.solve(Af + lam * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                x_new = x.copy()
                x_new[idx] += step
                E_new = _energy_only(prob, x_new)
                if not np.isfinite(E_new):
                    raise OptimizationError(f"{label}: energy became non-finite", trace)
                if E_new < E:
                    accepted = True
                    break
            lam *= 4.0
            if lam > 1e12:
                break
        if not accepted and step is not None and E_new > E * (1.0 + 1e-9) + floor:
            # even a vanishing step raises the energy: the model is diverging
            raise OptimizationError(f"{label}: energy increased after damping was exhausted",
                                    trace)
        converged = True
        if accepted:
            converged = (E - E_new) / max(E, 1e-300) < cfg.tolerance or E_new == 0.0
            x, E = x_new, E_new
            trace.append(E)
            lam = max(lam / 3.0, 1e-12)
        else:
            lam = cfg.initial_damping
        since_rebuild += 1
        if rebuild is not None and (since_rebuild >= cfg.rebuild_every or converged):
            # re-pair to nearest points; this never raises the energy
            prob.corr = rebuild(x)
            since_rebuild = 0
            E_re, A, g = _normal(prob, x)
            gain = (E - E_re) / max(E, 1e-300)
            if E_re < E:
                trace.append(E_re)
            # a round-off rise must not let later steps climb above the trace
            E = min(E, E_re)
            if converged and gain < cfg.tolerance:
                break
            continue
        if converged:
            break
        E, A, g = _normal(prob, x)
    return x, trace


# -- correspondences ------------------------------------------------------------

def _nearest(tree: cKDTree, n_points, queries):
    """Nearest target index per query; exact ties go to the lower index."""
    k = min(2, n_points)
    d, i = tree.query(queries, k=k)
    if k == 1:
        return i.reshape(-1), d.reshape(-1)
    d = np.atleast_2d(d)
    i = np.atleast_2d(i)
    best = i[:, 0].copy()
    tied = np.flatnonzero(d[:, 1] == d[:, 0])
    while tied.size:
        # widen the search until the tie group is complete, then take the lowest index
        k = min(2 * k, n_points)
        dt, it = tree.query(queries[tied], k=k)
        dt, it = np.atleast_2d(dt), np.atleast_2d(it)
        done = (dt[:, -1] > dt[:, 0]) | (k == n_points)
        masked = np.where(dt == dt[:, :1], it, np.iinfo(np.int64).max)
        best[tied[done]] = masked[done].min(axis=1)
        tied = tied[~done]
    return best, d[:, 0]


def target_points(target, density=2):
    """Point set representing a target: the vertices plus, for meshes, the
    same barycentric super-sampling used for the model."""
    if isinstance(target, Mesh):
        if target.n_vertices == 0:
            raise DegenerateInputError("empty target")
        if target.n_triangles == 0:
            return target.vertices.copy()
        bary = texel_barycentrics(density)
        corners = target.vertices[target.triangles]
        samples = np.einsum("kc,ncd->nkd", bary, corners).reshape(-1, 3)
        return np.concatenate([target.vertices, samples])
    pts = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateInputError("empty target")
    return pts


class TargetIndex:
    """k-d tree over a target's points."""

    def __init__(self, target, density=2):
        self.points = target_points(target, density)
        self.tree = cKDTree(self.points)

    def nearest(self, queries):
        i, d = _nearest(self.tree, len(self.points), np.asarray(queries, dtype=float).reshape(-1, 3))
        return self.points[i], i, d


def _vertex_refs(mesh: Mesh, vertices):
    """(triangle, barycentric) reference for each listed vertex, using the
    lowest-index triangle that contains it; isolated vertices are dropped."""
    vertices = np.asarray(vertices, dtype=np.int64)
    uniq, first = np.unique(mesh.triangles.ravel(), return_index=True)
    pos = np.full(mesh.n_vertices, -1, dtype=np.int64)
    pos[uniq] = first
    vertices = vertices[pos[vertices] >= 0]
    p = pos[vertices]
    bary = np.zeros((len(vertices), 3))
    bary[np.arange(len(vertices)), p % 3] = 1.0
    return p // 3, bary


def vertex_normals(mesh: Mesh):
    tri = mesh.vertices[mesh.triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    out = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], n)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.where(norm > 0, norm, 1.0)


def boundary_vertices(mesh: Mesh, view=(0.0, 0.0, 1.0), threshold=0.35):
    """Silhouette vertices for a viewing direction plus open-boundary vertices."""
    view = np.asarray(view, dtype=float)
    view = view / np.linalg.norm(view)
    sil = np.abs(vertex_normals(mesh) @ view) <= threshold
    e = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    open_v = np.zeros(mesh.n_vertices, dtype=bool)
    open_v[uniq[counts == 1].ravel()] = True
    return np.flatnonzero(sil | open_v)


def model_samples(mesh: Mesh, stage, density=2, view=(0.0, 0.0, 1.0), threshold=0.35):
    """Model surface points (triangles, barycentrics) used by a stage: the
    vertices plus a barycentric lattice on every triangle for
    ``supersampled``, silhouette and open-boundary vertices for ``boundary``."""
    if stage == "supersampled":
        vt, vb = _vertex_refs(mesh, np.arange(mesh.n_vertices))
        bary = texel_barycentrics(density)
        n = mesh.n_triangles
        tri = np.repeat(np.arange(n), len(bary))
        return np.concatenate([vt, tri]), np.concatenate([vb, np.tile(bary, (n, 1))])
    if stage == "boundary":
        return _vertex_refs(mesh, boundary_vertices(mesh, view, threshold))
    raise ParameterError(f"unknown stage {stage!r}; expected one of {STAGES}")


def _pair(mesh, tri, bary, index, symmetric):
    """Model samples to nearest target points, plus (when ``symmetric``) every
    target point to its nearest model sample."""
    pts = np.einsum("nk,nkc->nc", bary, mesh.vertices[mesh.triangles[tri]])
    nearest = index.nearest(pts)[0]
    if not symmetric:
        return CorrespondenceSet(tri, bary, nearest)
    # lattice samples lie strictly inside triangles and never coincide, so the
    # exact-tie widening of _nearest is not needed for this (larger) query
    j = cKDTree(pts).query(index.points, k=1)[1]
    return CorrespondenceSet(np.concatenate([tri, tri[j]]), np.concatenate([bary, bary[j]]),
                             np.concatenate([nearest, index.points]))


def build_correspondences(model_mesh: Mesh, target, stage, density=2, *,
                          view=(0.0, 0.0, 1.0), threshold=0.35, index=None,
                          symmetric=False) -> CorrespondenceSet:
    """Pair model surface points with their nearest target points.

    ``boundary`` uses silhouette and open-boundary vertices of the model;
    ``supersampled`` uses the vertices plus a barycentric lattice of
    ``density`` per side on every model triangle. With ``symmetric`` the
    super-sampled stage also pairs every target point with its nearest model
    sample.
    """
    if stage not in STAGES:
        raise ParameterError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if index is None:
        index = TargetIndex(target, density)
    tri, bary = model_samples(model_mesh, stage, density, view, threshold)
    return _pair(model_mesh, tri, bary, index, symmetric and stage == "supersampled")


# -- fitting stages ----------------------------------------------------------------

def _check_anchors(anchors: AnchorSet, n_vertices):
    if anchors is None or len(anchors) < 3:
        raise DegenerateInputError("at least 3 anchors are required")
    anchors.check(n_vertices)
    P = anchors.targets - anchors.targets.mean(0)
    s = np.linalg.svd(P, compute_uv=False)
    scale = max(s[0], 1e-300)
    if len(s) < 2 or s[1] <= 1e-9 * scale:
        raise DegenerateInputError("anchors are collinear")


def _free_mask(model, rotations=True, translation=True, shape=True):
    nJ, K = model.n_joints, model.n_shapes
    m = np.zeros(3 * nJ + 3 + K, dtype=bool)
    m[:3 * nJ] = rotations
    m[3 * nJ:3 * nJ + 3] = translation
    m[3 * nJ + 3:] = shape
    return m


def _canonical(x, nJ):
    x = np.array(x)
    x[:3 * nJ] = canonical_axis_angle(x[:3 * nJ].reshape(nJ, 3)).ravel()
    return x


def initial_fit(model: BodyModel, anchors: AnchorSet, config: RegistrationConfig = None,
                pose0: PoseParams | None = None):
    """Pose, translation and shape minimising the anchor term plus penalties.

    Returns (PoseParams, ShapeParams, trace).
    """
    config = config or RegistrationConfig()
    _check_anchors(anchors, model.template.n_vertices)
    if pose0 is None:
        rest = model.template.vertices[anchors.indices]
        pose0 = PoseParams(np.zeros((model.n_joints, 3)), (anchors.targets - rest).mean(0))
    prob = _Problem(model, config, anchors, None)
    x0 = pack(pose0, None, model.n_shapes)
    x, trace = _optimize(prob, x0, _free_mask(model), label="initial fit")
    x = _canonical(x, model.n_joints)
    pose, shape = unpack(x, model.n_joints)
    return pose, shape, trace


def fit_stage(model, target, stage, pose, shape, config, anchors=None, theta_prev=None,
              fit_shape=True, index=None):
    """One correspondence stage; returns (pose, shape, trace)."""
    if index is None:
        index = TargetIndex(target, config.density)
    nJ = model.n_joints
    mesh = pose_model(model, pose, shape)
    tri, bary = model_samples(mesh, stage, config.density, config.boundary_view,
                              config.boundary_threshold)

    symmetric = config.symmetric and stage == "supersampled"

    def rebuild(x):
        p, s = unpack(x, nJ)
        return _pair(pose_model(model, p, s), tri, bary, index, symmetric)

    x0 = pack(pose, shape, model.n_shapes)
    prob = _Problem(model, config, anchors, rebuild(x0),
                    None if theta_prev is None else np.asarray(theta_prev, dtype=float))
    x, trace = _optimize(prob, x0, _free_mask(model, shape=fit_shape), rebuild,
                         label=f"{stage} stage")
    x = _canonical(x, nJ)
    p, s = unpack(x, nJ)
    return p, s, trace


def _laplacian(mesh: Mesh):
    e = mesh.edges()
    n = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    vals = np.concatenate([np.ones(len(e)), np.ones(len(e)), -np.ones(len(e)), -np.ones(len(e))])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def refine(mesh_prime: Mesh, target, config: RegistrationConfig, index=None):
    """Free-form refinement: per-vertex displacements s minimising
    beta |v' + s - y|^2 + w_E sum_edges |s_a - s_b|^2 with y the nearest
    target point, re-paired ``refine_iterations`` times. Returns (M, s)."""
    if index is None:
        index = TargetIndex(target, config.density)
    L = _laplacian(mesh_prime)
    n = mesh_prime.n_vertices
    beta = max(config.beta, 1e-12)
    A = (beta * sparse.identity(n) + config.smooth_weight * L).tocsc()
    s = np.zeros((n, 3))
    for _ in range(max(1, config.refine_iterations)):
        y = index.nearest(mesh_prime.vertices + s)[0]
        rhs = beta * (y - mesh_prime.vertices)
        s = np.column_stack([spsolve(A, rhs[:, k]) for k in range(3)])
    return mesh_prime.with_vertices(mesh_prime.vertices + s), s


def register_sequence(model: BodyModel, targets, anchors: AnchorSet,
                      config: RegistrationConfig = None, pose0: PoseParams | None = None,
                      refine_meshes=True) -> RegistrationResult:
    """Register every target in order.

    Frame 0 runs the anchor fit, the boundary stage and the super-sampled
    stage and estimates the shared shape v. Later frames start from the
    previous pose and run the super-sampled stage with the temporal term.
    Each frame ends with free-form refinement.
    """
    config = config or RegistrationConfig()
    targets = list(targets)
    if not targets:
        raise DegenerateInputError("empty target sequence")
    poses, meshes, traces, stages = [], [], [], []
    shape = None
    for f, target in enumerate(targets):
        index = TargetIndex(target, config.density)
        st = {}
        if f == 0:
            pose, shape, st["initial"] = initial_fit(model, anchors, config, pose0)
            pose, shape, st["boundary"] = fit_stage(model, target, "boundary", pose, shape,
                                                    config, anchors, index=index)
            pose, shape, st["supersampled"] = fit_stage(model, target, "supersampled", pose,
                                                        shape, config, anchors, index=index)
        else:
            prev = poses[-1]
            pose, _, st["supersampled"] = fit_stage(model, target, "supersampled", prev, shape,
                                                    config, None, prev.rotations,
                                                    fit_shape=False, index=index)
        mesh_prime = pose_model(model, pose, shape)
        M = refine(mesh_prime, target, config, index)[0] if refine_meshes else mesh_prime
        poses.append(pose)
        meshes.append(M)
        traces.append(st["supersampled"])
        stages.append(st)
    return RegistrationResult(poses, shape, meshes, traces, stages)


def trace_non_increasing(trace, rtol=0.0):
    t = np.asarray(trace, dtype=float)
    return bool(np.all(np.diff(t) <= rtol * np.abs(t[:-1])))


# -- files ------------------------------------------------------------------------

ANCHOR_SCHEMA = "eigenavatar.anchors"


def save_anchors(anchors: AnchorSet, path):
    doc = {"schema": ANCHOR_SCHEMA, "version": 1,
           "anchors": [[int(i), *map(float, p)] for i, p in zip(anchors.indices, anchors.targets)]}
    atomic_write_text(path, json.dumps(doc, indent=1))


def load_anchors(path) -> AnchorSet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != ANCHOR_SCHEMA:
        raise ParameterError(f"{path}: not an anchor file")
    if doc.get("version") != 1:
        raise ParameterError(f"{path}: unsupported anchor file version {doc.get('version')}")
    rows = doc["anchors"]
    if not rows:
        return AnchorSet(np.zeros(0, np.int64), np.zeros((0, 3)))
    idx = [int(r[0]) for r in rows]
    pts = [r[1:4] for r in rows]
    return AnchorSet(idx, pts)


def save_report(result: RegistrationResult, path):
    atomic_write_text(path, json.dumps(result.report(), indent=1))


def sample_anchors(model: BodyModel, mesh: Mesh, per_part=4, seed=0) -> AnchorSet:
    """Anchors at ``per_part`` random vertices of every part of ``mesh``
    (which must share the model's topology)."""
    rng = np.random.default_rng(seed)
    idx = []
    for l in range(model.n_parts):
        verts = model.template.part_vertices(l)
        idx.extend(rng.choice(verts, size=min(per_part, len(verts)), replace=False).tolist())
    idx = np.sort(np.array(idx, dtype=np.int64))
    return AnchorSet(idx, mesh.vertices[idx])
