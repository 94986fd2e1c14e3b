"""Procedural 16-joint stand-in for a statistic body model.

The body is a stick figure in a T-pose lying in the x-y plane (y up), with
every bone dressed in an open polygonal tube of elliptical cross-section
(flatter for hands, feet and torso, as on a real body). Tubes do not overlap at rest so
that two cameras looking along +-z see every face at some point of a motion.
Each tube is one body part; its vertices are skinned mostly to the tube's own
joint with a linear ramp towards the parent and the along-axis child.
"""
import numpy as np

from .mesh import BodyModel, Mesh, Skeleton, hard_part_labels

JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
PARENTS = (-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14)

# rest joint positions (metres, y up)
_REST = np.array([
    [0.00, 1.00, 0.0],
    [0.00, 1.15, 0.0],
    [0.00, 1.32, 0.0],
    [0.00, 1.52, 0.0],
    [0.20, 1.45, 0.0],
    [0.48, 1.45, 0.0],
    [0.74, 1.45, 0.0],
    [-0.20, 1.45, 0.0],
    [-0.48, 1.45, 0.0],
    [-0.74, 1.45, 0.0],
    [0.10, 0.95, 0.0],
    [0.10, 0.52, 0.0],
    [0.10, 0.10, 0.0],
    [-0.10, 0.95, 0.0],
    [-0.10, 0.52, 0.0],
    [-0.10, 0.10, 0.0],
])

# tube end point for each part; the along-axis child is used where one exists
_TIP_CHILD = {0: 1, 1: 2, 2: 3, 4: 5, 5: 6, 7: 8, 8: 9, 10: 11, 11: 12, 13: 14, 14: 15}
_LEAF_TIPS = {
    3: [0.00, 1.78, 0.0],
    6: [0.90, 1.45, 0.0],
    9: [-0.90, 1.45, 0.0],
    12: [0.10, -0.02, 0.0],
    15: [-0.10, -0.02, 0.0],
}
# radius, segments around, rings along, start gap, end gap, ellipticity
_TUBES = {
    0: (0.14, 16, 5, -0.03, 0.01, 0.25),
    1: (0.13, 16, 5, 0.01, 0.01, 0.25),
    2: (0.15, 16, 5, 0.01, 0.02, 0.25),
    3: (0.09, 16, 5, 0.02, 0.0, 0.15),
    4: (0.050, 12, 6, 0.02, 0.01, 0.3),
    5: (0.045, 12, 6, 0.01, 0.01, 0.3),
    6: (0.040, 12, 5, 0.01, 0.0, 0.5),
    7: (0.050, 12, 6, 0.02, 0.01, 0.3),
    8: (0.045, 12, 6, 0.01, 0.01, 0.3),
    9: (0.040, 12, 5, 0.01, 0.0, 0.5),
    10: (0.070, 12, 6, 0.02, 0.01, 0.3),
    11: (0.055, 12, 6, 0.01, 0.01, 0.3),
    12: (0.045, 12, 5, 0.01, 0.0, 0.5),
    13: (0.070, 12, 6, 0.02, 0.01, 0.3),
    14: (0.055, 12, 6, 0.01, 0.01, 0.3),
    15: (0.045, 12, 5, 0.01, 0.0, 0.5),
}
_RAMP = 0.35
_NEIGHBOR_MAX = 0.4

ELBOWS = (5, 8)
KNEES = (11, 14)


def _tube_frame(axis):
    """Unit axis plus a perpendicular pair (a, b) with b along z whenever the
    axis lies in the x-y plane, so no face normal is parallel to the image
    plane of a camera looking along z."""
    u = axis / np.linalg.norm(axis)
    b = np.array([0.0, 0.0, 1.0])
    b = b - u * (u @ b)
    b /= np.linalg.norm(b)
    a = np.cross(b, u)
    return u, a, b


def tips():
    out = np.zeros((16, 3))
    for j in range(16):
        out[j] = _REST[_TIP_CHILD[j]] if j in _TIP_CHILD else _LEAF_TIPS[j]
    return out


def build_standin_model() -> BodyModel:
    """Deterministic stand-in model: 16 joints, 4 shape blendshapes."""
    tip = tips()
    verts, tris, owner, along, normals, weights = [], [], [], [], [], []
    n_joints = len(PARENTS)
    for j in range(n_joints):
        radius, n_around, n_rings, gap0, gap1, ecc = _TUBES[j]
        start, end = _REST[j], tip[j]
        u, a, b = _tube_frame(end - start)
        length = np.linalg.norm(end - start)
        p0 = start + gap0 * u
        p1 = end - gap1 * u
        base = len(verts)
        for r in range(n_rings):
            s = r / (n_rings - 1)
            centre = p0 + s * (p1 - p0)
            s_bone = ((centre - start) @ u) / length
            for k in range(n_around):
                phi = 2.0 * np.pi * k / n_around
                n = np.cos(phi) * a + np.sin(phi) * b
                # wider in the frontal (x-y) plane than in depth
                verts.append(centre + radius * (1.0 + ecc * np.cos(2.0 * phi)) * n)
                normals.append(n)
                owner.append(j)
                along.append(s_bone)
                w = np.zeros(n_joints)
                w[j] = 1.0
                parent = PARENTS[j]
                if parent >= 0:
                    w[parent] += _NEIGHBOR_MAX * max(0.0, 1.0 - s_bone / _RAMP)
                if j in _TIP_CHILD:
                    w[_TIP_CHILD[j]] += _NEIGHBOR_MAX * max(0.0, 1.0 - (1.0 - s_bone) / _RAMP)
                weights.append(w / w.sum())
        for r in range(n_rings - 1):
            for k in range(n_around):
                i00 = base + r * n_around + k
                i01 = base + r * n_around + (k + 1) % n_around
                i10 = i00 + n_around
                i11 = i01 + n_around
                tris.append((i00, i01, i11))
                tris.append((i00, i11, i10))
    verts = np.array(verts)
    normals = np.array(normals)
    owner = np.array(owner)
    weights = np.array(weights)
    labels = hard_part_labels(weights)
    assert np.array_equal(labels, owner)

    arms = np.isin(owner, [4, 5, 6, 7, 8, 9])
    legs = np.isin(owner, [10, 11, 12, 13, 14, 15])
    torso = np.isin(owner, [0, 1, 2])
    blend = np.zeros((4, len(verts), 3))
    blend[0] = 0.02 * normals
    blend[1] = 0.015 * normals * arms[:, None]
    blend[2] = 0.015 * normals * legs[:, None]
    blend[3, :, 2] = 0.03 * normals[:, 2] * torso
    offsets = _REST.copy()
    for j in range(1, n_joints):
        offsets[j] = _REST[j] - _REST[PARENTS[j]]
    skeleton = Skeleton(np.array(PARENTS), offsets, JOINT_NAMES)
    template = Mesh(verts, np.array(tris), labels)
    return BodyModel(template, skeleton, weights, blend)


def default_joint_limits():
    """Axis-angle component limits (radians) for the hinge joints.

    Elbows flex about -y/+y (forearm swings forward), knees about +x.
    """
    big = np.pi
    lim = {}
    lim[5] = (np.array([-0.3, -2.6, -0.3]), np.array([0.3, 0.05, 0.3]))
    lim[8] = (np.array([-0.3, -0.05, -0.3]), np.array([0.3, 2.6, 0.3]))
    for k in KNEES:
        lim[k] = (np.array([-0.05, -0.3, -0.3]), np.array([big * 0.8, 0.3, 0.3]))
    return lim


def manifest(model: BodyModel) -> dict:
    return {
        "name": "standin-16",
        "n_vertices": model.template.n_vertices,
        "n_triangles": model.template.n_triangles,
        "n_joints": model.n_joints,
        "n_shapes": model.n_shapes,
    }
