import numpy as np
import pytest

from eigenavatar import deform
from eigenavatar.errors import ParameterError
from eigenavatar.geometry import axis_angle_to_matrix
from eigenavatar.mesh import PoseParams, part_frames, pose_model
from eigenavatar.meshio import load_shipped_model


@pytest.fixture(scope="module")
def model():
    return load_shipped_model()


def _clothe(model, pose, local):
    """World mesh whose local displacements are exactly ``local`` (V, 3)."""
    Mp = pose_model(model, pose)
    H = part_frames(model, pose)
    labels = model.template.part_of_vertex
    R = np.stack([h.rotation for h in H])
    world = np.einsum("vba,vb->va", R[labels], local)  # rot(H)^T q
    return Mp.with_vertices(Mp.vertices + world), Mp, H


def test_local_displacements_do_not_depend_on_articulation(model):
    rng = np.random.default_rng(0)
    local = rng.normal(scale=0.01, size=(model.template.n_vertices, 3))
    fields = []
    for k in range(3):
        pose = PoseParams(rng.normal(scale=0.6, size=(16, 3)), rng.normal(size=3))
        M, Mp, H = _clothe(model, pose, local)
        fields.append(deform.displacement_field(M, Mp, H))
    for l in range(16):
        idx = model.template.part_vertices(l)
        for f in fields:
            np.testing.assert_allclose(f.parts[l], local[idx].ravel(), atol=1e-12)


def test_full_rank_embedding_reconstructs_mesh(model):
    rng = np.random.default_rng(1)
    fields, meshes, frames = [], [], []
    for k in range(6):
        pose = PoseParams(rng.normal(scale=0.4, size=(16, 3)))
        local = rng.normal(scale=0.01, size=(model.template.n_vertices, 3))
        M, Mp, H = _clothe(model, pose, local)
        fields.append(deform.displacement_field(M, Mp, H, frame=k))
        meshes.append(M)
        frames.append((Mp, H))
    dm = deform.fit_deform_model(fields, 10, deform.part_index_lists(model.template, 16))
    assert dm.dims() == [6] * 16  # clamped to the frame count
    for f, (M, (Mp, H)) in enumerate(zip(meshes, frames)):
        rec = deform.apply_displacements(Mp, deform.embed_field(dm, fields[f]), dm, H)
        assert deform.rmse(rec, M) < 1e-12


def test_truncated_model_and_zero_coefficients(model):
    rng = np.random.default_rng(2)
    pose = PoseParams(np.zeros((16, 3)))
    fields = []
    for k in range(4):
        M, Mp, H = _clothe(model, pose, rng.normal(scale=0.01, size=(model.template.n_vertices, 3)))
        fields.append(deform.displacement_field(M, Mp, H))
    dm = deform.fit_deform_model(fields, 4, deform.part_index_lists(model.template, 16))
    short = dm.truncated(2)
    assert short.dims() == [2] * 16
    # zero coefficients give the mean displacement
    Mp = pose_model(model, pose)
    H = part_frames(model, pose)
    out = deform.apply_displacements(Mp, [np.zeros(2)] * 16, short, H)
    mean = np.zeros((model.template.n_vertices, 3))
    for l, idx in enumerate(short.part_vertices):
        mean[idx] = short.subspaces[l].mean.reshape(-1, 3)
    np.testing.assert_allclose(out.vertices - Mp.vertices, mean, atol=1e-12)


def test_input_checks(model):
    Mp = pose_model(model, model.identity_pose())
    other = Mp.with_vertices(Mp.vertices)
    H = part_frames(model, model.identity_pose())
    bad_parts = type(Mp)(Mp.vertices, Mp.triangles, np.zeros(Mp.n_vertices, np.int64))
    with pytest.raises(ParameterError):
        deform.displacement_field(bad_parts, Mp, H)
    f = deform.displacement_field(other, Mp, H)
    dm = deform.fit_deform_model([f, f], 1, deform.part_index_lists(model.template, 16))
    with pytest.raises(ParameterError):
        deform.apply_displacements(Mp, [np.zeros(1)] * 15, dm, H)
    with pytest.raises(ParameterError):
        deform.apply_displacements(Mp, [np.zeros(2)] * 16, dm, H)
    with pytest.raises(ParameterError):
        deform.fit_deform_model([], 1, deform.part_index_lists(model.template, 16))


def test_rotation_only_of_part_frame_is_used(model):
    pose = PoseParams(np.zeros((16, 3)), np.array([5.0, -3.0, 1.0]))
    M, Mp, H = _clothe(model, pose, np.full((model.template.n_vertices, 3), 0.01))
    f = deform.displacement_field(M, Mp, H)
    # a large root translation must not leak into the displacements
    np.testing.assert_allclose(np.concatenate(f.parts), 0.01, atol=1e-12)
    assert np.allclose(axis_angle_to_matrix(np.zeros(3)), H[0].rotation)
