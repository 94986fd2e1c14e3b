"""Eigen-deformation: per-part displacement subspaces between M and M'."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import subspace
from .errors import ParameterError
from .mesh import Mesh, RigidTransform


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-part concatenated displacement vectors in each part's local frame."""

    parts: tuple  # of (3 * |part|,) arrays
    frame: int = -1

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(np.asarray(q, dtype=float) for q in self.parts))


@dataclass(frozen=True, eq=False)
class DeformModel:
    subspaces: tuple  # EigenSubspace per part
    part_vertices: tuple  # vertex index array per part

    def __post_init__(self):
        for l, (sub, idx) in enumerate(zip(self.subspaces, self.part_vertices)):
            if sub.dim != 3 * len(idx):
                raise ParameterError(f"part {l}: subspace dim {sub.dim} != 3 x {len(idx)}")

    @property
    def n_parts(self):
        return len(self.subspaces)

    def dims(self):
        return [s.n_components for s in self.subspaces]

    def truncated(self, L) -> "DeformModel":
        subs = tuple(s.truncated(min(L, s.n_components)) for s in self.subspaces)
        return DeformModel(subs, self.part_vertices)


def part_index_lists(mesh: Mesh, n_parts=None):
    n = mesh.n_parts if n_parts is None else n_parts
    return tuple(mesh.part_vertices(l) for l in range(n))


def _rotations(H):
    return np.stack([h.rotation if isinstance(h, RigidTransform) else np.asarray(h)[:3, :3] for h in H])


def displacement_field(M: Mesh, M_prime: Mesh, H, frame=-1) -> DisplacementField:
    """q_lk = rot(H_l) (v_lk - v'_lk), grouped by part.

    Only the rotation of H_l acts on the difference vector: a translation
    would cancel between v and v' anyway.
    """
    if M.n_vertices != M_prime.n_vertices or not np.array_equal(M.triangles, M_prime.triangles):
        raise ParameterError("M and M' must share topology")
    if not np.array_equal(M.part_of_vertex, M_prime.part_of_vertex):
        raise ParameterError("M and M' must share part labels")
    R = _rotations(H)
    diff = M.vertices - M_prime.vertices
    parts = []
    for l in range(len(R)):
        idx = M.part_vertices(l)
        parts.append((diff[idx] @ R[l].T).reshape(-1))
    return DisplacementField(tuple(parts), frame)


def stack_fields(fields, part):
    return np.stack([f.parts[part] for f in fields], axis=1)


def fit_deform_model(fields, L, part_vertices) -> DeformModel:
    """One subspace per part over the per-frame displacement columns.

    ``L`` is clamped per part to min(3 |part|, F).
    """
    fields = list(fields)
    if not fields:
        raise ParameterError("need at least one frame")
    n_parts = len(fields[0].parts)
    if any(len(f.parts) != n_parts for f in fields) or len(part_vertices) != n_parts:
        raise ParameterError("inconsistent part structure across frames")
    subs = []
    for l in range(n_parts):
        Q = stack_fields(fields, l)
        if Q.shape[0] != 3 * len(part_vertices[l]):
            raise ParameterError(f"part {l}: field length does not match its vertex count")
        Ll = min(L, Q.shape[0], Q.shape[1])
        subs.append(subspace.fit(Q, Ll))
    return DeformModel(tuple(subs), tuple(np.asarray(p) for p in part_vertices))


def embed_field(model: DeformModel, field: DisplacementField):
    return [subspace.embed(s, q) for s, q in zip(model.subspaces, field.parts)]


def apply_displacements(M_prime: Mesh, coeffs, model: DeformModel, H) -> Mesh:
    """v_lk = v'_lk + rot(H_l)^-1 q~_lk with q~ decoded from ``coeffs``."""
    if len(coeffs) != model.n_parts:
        raise ParameterError(f"expected {model.n_parts} coefficient vectors, got {len(coeffs)}")
    R = _rotations(H)
    verts = np.array(M_prime.vertices, copy=True)
    for l, (sub, idx, c) in enumerate(zip(model.subspaces, model.part_vertices, coeffs)):
        c = np.asarray(c, dtype=float)
        if c.shape != (sub.n_components,):
            raise ParameterError(f"part {l}: expected {sub.n_components} coefficients, got {c.shape}")
        q = subspace.reconstruct(sub, c).reshape(-1, 3)
        verts[idx] += q @ R[l]
    return M_prime.with_vertices(verts)


def rmse(A, B) -> float:
    """Root mean squared per-vertex distance between two vertex arrays."""
    a = A.vertices if isinstance(A, Mesh) else np.asarray(A)
    b = B.vertices if isinstance(B, Mesh) else np.asarray(B)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))
