"""Triangle meshes, articulated body models and linear blend skinning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import axis_angle_to_matrix, right_jacobian


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Shared-topology triangle mesh with a hard part label per vertex."""

    vertices: np.ndarray
    triangles: np.ndarray
    part_of_vertex: np.ndarray = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        t = _frozen(self.triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ParameterError(f"vertices must be (V, 3), got {v.shape}")
        if t.size == 0:
            t = _frozen(np.zeros((0, 3)), np.int64)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ParameterError(f"triangles must be (T, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ParameterError("triangle index out of range")
        if t.size and np.any(
            (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        ):
            raise ParameterError("degenerate triangle (repeated vertex index)")
        parts = self.part_of_vertex
        parts = np.zeros(len(v), np.int64) if parts is None else parts
        parts = _frozen(parts, np.int64)
        if parts.shape != (len(v),):
            raise ParameterError("part_of_vertex length must equal vertex count")
        if parts.size and parts.min() < 0:
            raise ParameterError("negative part index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "part_of_vertex", parts)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_parts(self):
        return int(self.part_of_vertex.max()) + 1 if self.n_vertices else 0

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.triangles, self.part_of_vertex)

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted, as an (E, 2) array."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def part_vertices(self, part) -> np.ndarray:
        return np.flatnonzero(self.part_of_vertex == part)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint tree. ``offsets[j]`` is the rest position of joint j relative to
    its parent (absolute position for the root)."""

    parents: np.ndarray
    offsets: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        p = _frozen(self.parents, np.int64)
        o = _frozen(self.offsets, np.float64)
        if o.shape != (len(p), 3):
            raise ParameterError("offsets must be (J, 3)")
        if len(p) == 0 or p[0] != -1:
            raise ParameterError("joint 0 must be the root (parent -1)")
        for j in range(1, len(p)):
            if not 0 <= p[j] < j:
                raise ParameterError(f"joint {j} parent {p[j]} not topologically ordered")
        if not np.all(np.isfinite(o)):
            raise ParameterError("rest offsets must be finite")
        object.__setattr__(self, "parents", p)
        object.__setattr__(self, "offsets", o)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_joints(self):
        return len(self.parents)

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j, p in enumerate(self.parents):
            pos[j] = self.offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos

    def descendants(self) -> np.ndarray:
        """Boolean (J, J) matrix; ``D[k, j]`` is True when j is k or below k."""
        n = self.n_joints
        D = np.eye(n, dtype=bool)
        for j in range(1, n):
            D[:, j] |= D[:, self.parents[j]]
        return D


@dataclass(frozen=True, eq=False)
class PoseParams:
    """Per-joint local rotations as axis-angle (J, 3) plus a root translation."""

    rotations: np.ndarray
    translation: np.ndarray = None

    def __post_init__(self):
        r = _frozen(self.rotations, np.float64)
        if r.ndim != 2 or r.shape[1] != 3:
            raise ParameterError(f"rotations must be (J, 3), got {r.shape}")
        t = np.zeros(3) if self.translation is None else self.translation
        t = _frozen(t, np.float64)
        if t.shape != (3,):
            raise ParameterError("translation must be a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ParameterError("pose parameters must be finite")
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, n_joints):
        return cls(np.zeros((n_joints, 3)))

    def matrices(self) -> np.ndarray:
        return axis_angle_to_matrix(self.rotations)


@dataclass(frozen=True, eq=False)
class ShapeParams:
    coefficients: np.ndarray

    def __post_init__(self):
        c = _frozen(np.atleast_1d(self.coefficients), np.float64)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ParameterError("shape coefficients must be a finite vector")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, np.float64)
        t = _frozen(self.translation, np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ParameterError("rigid transform needs a 3x3 rotation and 3-vector")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ParameterError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def apply_vector(self, vectors):
        return np.asarray(vectors) @ self.rotation.T


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Articulated template: rest mesh, skeleton, skinning weights (V, J) and
    shape blendshapes (K, V, 3)."""

    template: Mesh
    skeleton: Skeleton
    weights: np.ndarray
    blendshapes: np.ndarray

    def __post_init__(self):
        W = _frozen(self.weights, np.float64)
        B = _frozen(self.blendshapes, np.float64)
        V, J = self.template.n_vertices, self.skeleton.n_joints
        if W.shape != (V, J):
            raise ParameterError(f"weights must be ({V}, {J}), got {W.shape}")
        if W.min() < 0 or not np.allclose(W.sum(1), 1.0, atol=1e-9, rtol=0):
            raise ParameterError("skinning weights must be non-negative and sum to 1")
        if B.ndim != 3 or B.shape[1:] != (V, 3):
            raise ParameterError(f"blendshapes must be (K, {V}, 3), got {B.shape}")
        if self.template.n_vertices and self.template.part_of_vertex.max() >= J:
            raise ParameterError("part index exceeds joint count")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "blendshapes", B)

    @property
    def n_joints(self):
        return self.skeleton.n_joints

    @property
    def n_shapes(self):
        return len(self.blendshapes)

    @property
    def n_parts(self):
        return self.skeleton.n_joints

    def identity_pose(self):
        return PoseParams.identity(self.n_joints)

    def zero_shape(self):
        return ShapeParams.zeros(self.n_shapes)

    def part_vertex_lists(self):
        return [self.template.part_vertices(l) for l in range(self.n_parts)]


def hard_part_labels(weights) -> np.ndarray:
    """Argmax skinning weight per vertex; ties go to the lower joint index."""
    return np.argmax(np.asarray(weights), axis=1).astype(np.int64)


def _check_params(model: BodyModel, pose: PoseParams, shape: ShapeParams | None):
    if pose.rotations.shape[0] != model.n_joints:
        raise ParameterError(
            f"pose has {pose.rotations.shape[0]} joints, model has {model.n_joints}"
        )
    if shape is not None and len(shape.coefficients) != model.n_shapes:
        raise ParameterError(
            f"shape has {len(shape.coefficients)} coefficients, model has {model.n_shapes}"
        )


def forward_kinematics(skeleton: Skeleton, pose: PoseParams) -> np.ndarray:
    """Global 4x4 bone transforms (J, 4, 4) for ``pose``."""
    Rl = pose.matrices()
    G = np.zeros((skeleton.n_joints, 4, 4))
    for j, p in enumerate(skeleton.parents):
        L = np.eye(4)
        L[:3, :3] = Rl[j]
        L[:3, 3] = skeleton.offsets[j]
        if p < 0:
            L[:3, 3] = L[:3, 3] + pose.translation
            G[j] = L
        else:
            G[j] = G[p] @ L
    return G


def skinning_transforms(skeleton: Skeleton, G) -> np.ndarray:
    """Rest-relative transforms A_j = G_j [I, -rest_j]."""
    rest = skeleton.rest_positions()
    A = np.array(G, dtype=float, copy=True)
    A[:, :3, 3] = A[:, :3, 3] - np.einsum("jab,jb->ja", A[:, :3, :3], rest)
    return A


def shaped_template(model: BodyModel, shape: ShapeParams | None) -> np.ndarray:
    v = model.template.vertices
    if shape is None or model.n_shapes == 0:
        return v.copy()
    return v + np.einsum("k,kvc->vc", shape.coefficients, model.blendshapes)


def skin(weights, A, points) -> np.ndarray:
    """Linear blend skinning of rest-space ``points`` by transforms ``A``."""
    R = np.einsum("vj,jab->vab", weights, A[:, :3, :3])
    t = weights @ A[:, :3, 3]
    return np.einsum("vab,vb->va", R, points) + t


def pose_model(model: BodyModel, pose: PoseParams, shape: ShapeParams | None = None) -> Mesh:
    """Posed statistic-model mesh M' for joint rotations and shape coefficients."""
    _check_params(model, pose, shape)
    rest = shaped_template(model, shape)
    G = forward_kinematics(model.skeleton, pose)
    verts = skin(model.weights, skinning_transforms(model.skeleton, G), rest)
    return model.template.with_vertices(verts)


def part_frames(model: BodyModel, pose: PoseParams) -> list[RigidTransform]:
    """H_l for every part: the inverse of the bone's posed global transform,
    mapping world coordinates into the bone's local frame."""
    _check_params(model, pose, None)
    G = forward_kinematics(model.skeleton, pose)
    return [RigidTransform.from_matrix(g).inverse() for g in G]


def pose_jacobian(model: BodyModel, pose: PoseParams, shape: ShapeParams | None = None):
    """Posed vertices and their derivatives.

    Returns ``(verts, J)`` with ``J`` of shape (V, 3, 3J + 3 + K), ordered
    (axis-angle of every joint, root translation, shape coefficients).
    """
    _check_params(model, pose, shape)
    sk = model.skeleton
    nJ, K = sk.n_joints, model.n_shapes
    rest = shaped_template(model, shape)
    G = forward_kinematics(sk, pose)
    A = skinning_transforms(sk, G)
    W = model.weights
    # X[v, j] = A_j applied to the rest vertex
    X = np.transpose(A[:, :3, :3] @ rest.T, (2, 0, 1)) + A[None, :, :3, 3]
    verts = np.einsum("vj,vja->va", W, X)

    D = sk.descendants().astype(float)  # D[k, j]
    Wd = W @ D.T  # Wd[v, k] = sum_{j below k} w_vj
    Xd = np.matmul(W[:, None, :] * D[None], X)  # sum_j W[v, j] D[k, j] X[v, j]
    origins = G[:, :3, 3]
    Y = Xd - Wd[:, :, None] * origins[None]  # (V, J, 3)
    axes = G[:, :3, :3]  # columns are world-frame axes of each bone
    # d vert / d delta_m = axes[:, :, m] x Y and d delta / d theta = Jr, so the
    # column for theta_n is (axes Jr)[:, n] x Y
    B = np.swapaxes(axes @ right_jacobian(pose.rotations), 1, 2)  # (J, n, 3)
    jac_aa = np.cross(B[None], Y[:, :, None, :])  # (V, J, n, 3)
    n_par = 3 * nJ + 3 + K
    jac = np.zeros((len(verts), 3, n_par))
    jac[:, :, : 3 * nJ] = np.transpose(jac_aa, (0, 3, 1, 2)).reshape(len(verts), 3, 3 * nJ)
    jac[:, :, 3 * nJ : 3 * nJ + 3] = np.eye(3)[None]
    if K:
        Rv = np.einsum("vj,jab->vab", W, A[:, :3, :3])
        jac[:, :, 3 * nJ + 3 :] = np.einsum("vab,kvb->vak", Rv, model.blendshapes)
    return verts, jac
