import numpy as np
import pytest
from scipy.spatial import cKDTree

from eigenavatar import registration as rg
from eigenavatar.errors import DegenerateInputError, ParameterError
from eigenavatar.geometry import axis_angle_to_matrix, geodesic_angle
from eigenavatar.mesh import PoseParams, ShapeParams, pose_model
from eigenavatar.meshio import load_shipped_model

from oracles import central_difference, relative_error


@pytest.fixture(scope="module")
def model():
    return load_shipped_model()


def _random_state(model, rng):
    pose = PoseParams(rng.normal(scale=0.3, size=(model.n_joints, 3)), rng.normal(scale=0.1, size=3))
    shape = ShapeParams(rng.normal(scale=0.5, size=model.n_shapes))
    return pose, shape


@pytest.mark.parametrize("seed", range(4))
def test_energy_gradient_against_finite_differences(model, seed):
    rng = np.random.default_rng(seed)
    pose, shape = _random_state(model, rng)
    mesh = pose_model(model, pose, shape)
    anchors = rg.sample_anchors(model, mesh.with_vertices(mesh.vertices + 0.01), per_part=2,
                                seed=seed)
    tri, bary = rg.model_samples(model.template, "supersampled", density=1)
    pick = rng.choice(len(tri), size=300, replace=False)
    targets = rng.normal(scale=0.5, size=(300, 3)) + [0.0, 0.9, 0.0]
    corr = rg.CorrespondenceSet(tri[pick], bary[pick], targets)
    prev = pose.rotations + rng.normal(scale=0.05, size=pose.rotations.shape)
    # push a few components past their limits so the hinge is active
    cfg = rg.RegistrationConfig()
    ev = rg.energy(model, pose, shape, anchors, corr, prev, cfg)
    nJ = model.n_joints
    x0 = rg.pack(pose, shape, model.n_shapes)

    def f(x):
        p, s = rg.unpack(x, nJ)
        return rg.energy(model, p, s, anchors, corr, prev, cfg).value

    num = central_difference(f, x0, h=1e-6)
    assert relative_error(ev.gradient, num) < 1e-5
    assert set(ev.terms) >= {"anchor", "correspondence", "limits", "temporal", "shape"}


def test_energy_terms_sum_to_total(model):
    rng = np.random.default_rng(9)
    pose, shape = _random_state(model, rng)
    anchors = rg.sample_anchors(model, model.template, per_part=1)
    ev = rg.energy(model, pose, shape, anchors, None, pose.rotations * 0.5)
    assert ev.value == pytest.approx(sum(ev.terms.values()), rel=1e-12)


def test_rest_target_registers_to_identity(model):
    target = model.template
    anchors = rg.sample_anchors(model, target, per_part=3)
    res = rg.register_sequence(model, [target], anchors)
    angles = geodesic_angle(np.eye(3), axis_angle_to_matrix(res.poses[0].rotations))
    assert np.degrees(angles.max()) < 0.1
    assert np.abs(res.meshes[0].vertices - target.vertices).max() < 1e-3 * target.bbox_diagonal()
    assert all(rg.trace_non_increasing(t) for t in res.all_traces())
    rep = res.report()
    assert rep["frames"][0]["stages"].keys() == {"initial", "boundary", "supersampled"}


def test_nearest_breaks_exact_ties_towards_lower_index():
    pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
                    [3.0, 3.0, 3.0]])
    tree = cKDTree(pts[::-1].copy())
    idx, d = rg._nearest(tree, len(pts), np.zeros((1, 3)))
    # four points at distance 1 sit at reversed indices 1..4; the lowest is 1
    assert idx[0] == 1 and d[0] == 1.0


def test_symmetric_pairing_adds_one_pair_per_target_point(model):
    target = pose_model(model, model.identity_pose())
    index = rg.TargetIndex(target, density=2)
    one = rg.build_correspondences(target, target, "supersampled", 2, index=index)
    two = rg.build_correspondences(target, target, "supersampled", 2, index=index, symmetric=True)
    assert len(two) == len(one) + len(index.points)
    np.testing.assert_allclose(one.model_points(target), one.targets, atol=1e-12)


def test_boundary_stage_uses_silhouette_vertices(model):
    tri, bary = rg.model_samples(model.template, "boundary")
    sil = rg.boundary_vertices(model.template)
    assert len(tri) == len(sil) > 0
    pts = np.einsum("nk,nkc->nc", bary, model.template.vertices[model.template.triangles[tri]])
    np.testing.assert_allclose(np.sort(pts, axis=0),
                               np.sort(model.template.vertices[sil], axis=0))
    with pytest.raises(ParameterError):
        rg.model_samples(model.template, "dense")


def test_refinement_leaves_a_perfect_fit_unchanged(model):
    M = pose_model(model, model.identity_pose())
    out, s = rg.refine(M, M, rg.RegistrationConfig())
    assert np.abs(s).max() < 1e-12
    assert out.n_vertices == M.n_vertices


def test_trace_helper():
    assert rg.trace_non_increasing([3.0, 2.0, 2.0, 1.0])
    assert not rg.trace_non_increasing([3.0, 3.5])


def test_anchor_files_round_trip(tmp_path, model):
    a = rg.sample_anchors(model, model.template, per_part=2, seed=4)
    rg.save_anchors(a, tmp_path / "a.json")
    b = rg.load_anchors(tmp_path / "a.json")
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.targets, b.targets)
    (tmp_path / "bad.json").write_text('{"schema": "other", "version": 1, "anchors": []}')
    with pytest.raises(ParameterError):
        rg.load_anchors(tmp_path / "bad.json")


def test_config_round_trip_and_validation():
    cfg = rg.RegistrationConfig(alpha=3.0, density=3)
    back = rg.RegistrationConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    for bad in (dict(alpha=-1.0), dict(tolerance=0.0), dict(density=0)):
        with pytest.raises(ParameterError):
            rg.RegistrationConfig(**bad)


def test_input_validation(model):
    with pytest.raises(DegenerateInputError):
        rg.register_sequence(model, [], rg.sample_anchors(model, model.template))
    with pytest.raises(ParameterError):
        rg.AnchorSet([1, 2], [[0.0, 0.0, 0.0]])
    with pytest.raises(ParameterError):
        rg.CorrespondenceSet([0], [[0.5, 0.6, 0.2]], [[0.0, 0.0, 0.0]])
    bad = rg.AnchorSet([10 ** 6], [[0.0, 0.0, 0.0]])
    with pytest.raises(ParameterError):
        rg.energy(model, model.identity_pose(), None, bad, None)
