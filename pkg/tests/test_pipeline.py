import numpy as np
import pytest

from eigenavatar import archive as arc, pipeline
from eigenavatar.errors import ParameterError
from eigenavatar.mesh import PoseParams
from eigenavatar.raster import texel_count


def test_stored_decode_matches_deformation_subspace(tiny):
    seq, data, cfg, ar = tiny
    assert ar.n_frames == 8 and max(ar.deform.dims()) <= 3
    out = pipeline.decode(ar, 2)
    assert out.mesh.n_vertices == seq.model.template.n_vertices
    assert out.textures.shape == (seq.model.template.n_triangles, texel_count(3), 3)
    # with L at its cap every displacement field is within the subspace error
    err = np.abs(out.mesh.vertices - seq.clothed[2]).max()
    assert err < 0.05


def test_full_rank_encoding_is_exact(tiny):
    seq, data, cfg, _ = tiny
    full = pipeline.encode(data, pipeline.EncodeConfig(L=8, T=3, texture=False,
                                                      deform_train=cfg.deform_train))
    rec = pipeline.reconstruct_vertices(full, range(8))
    assert np.abs(rec - seq.clothed).max() < 1e-10


def test_regressed_decode_from_a_new_pose(tiny):
    ar = tiny[3]
    pose = PoseParams(ar.poses[0] * 0.5, ar.translations[0])
    out = pipeline.decode(ar, pose=pose, mode="regressed")
    assert np.isfinite(out.mesh.vertices).all() and np.isfinite(out.textures).all()


def test_decode_argument_errors(tiny):
    ar = tiny[3]
    for kw in (dict(frame=99), dict(frame=0, mode="other"), dict(),
               dict(pose=PoseParams(ar.poses[0]), mode="stored")):
        with pytest.raises(ParameterError):
            pipeline.decode(ar, **kw)


def test_errors_carry_the_stage_prefix(tiny):
    ar = tiny[3]
    with pytest.raises(ParameterError) as err:
        pipeline.decode(ar, pose=PoseParams(np.zeros((3, 3))), mode="regressed")
    assert str(err.value).startswith("[decode]")


def test_evaluate_subset_and_compression(tiny):
    seq, _, _, ar = tiny
    rep = pipeline.evaluate(ar, seq.clothed, frames=[1, 3], Ls=(1, 3))
    assert list(rep.frames) == [1, 3] and rep.vertex_rmse.shape == (2, seq.model.template.n_vertices)
    assert len(rep.contribution[0]) == 3
    comp = rep.compression
    assert comp.archive_bytes == len(arc.to_bytes(ar))
    assert comp.vertex_bytes == 8 * seq.model.template.n_vertices * 12
    with pytest.raises(ParameterError):
        pipeline.evaluate(ar, seq.clothed, frames=[8])


def test_encode_is_deterministic_and_honours_training_frames(tiny):
    _, data, cfg, ar = tiny
    assert arc.to_bytes(pipeline.encode(data, cfg)) == arc.to_bytes(ar)
    sub = pipeline.encode(data, pipeline.EncodeConfig(L=2, T=3, texture=False, train_frames=(0, 2, 4),
                                                      deform_train=cfg.deform_train))
    assert max(sub.deform.dims()) <= 2 and sub.n_frames == 8
    with pytest.raises(ParameterError):
        pipeline.encode(data, pipeline.EncodeConfig(texture=False, train_frames=(9,)))


def test_config_round_trip_and_validation():
    cfg = pipeline.EncodeConfig(L=4, train_frames=(1, 2))
    assert pipeline.EncodeConfig.from_dict(cfg.to_dict()) == cfg
    assert pipeline.with_L(cfg, 7).L == 7
    for bad in (dict(L=0), dict(T=0), dict(texture_mode="atlas")):
        with pytest.raises(ParameterError):
            pipeline.EncodeConfig(**bad)


def test_sequence_data_validation(tiny):
    seq = tiny[0]
    with pytest.raises(ParameterError):
        pipeline.SequenceData(seq.model, seq.poses, seq.translations[:3], seq.shape, seq.clothed)
    with pytest.raises(ParameterError):
        pipeline.SequenceData(seq.model, seq.poses, seq.translations, seq.shape, seq.clothed[:, :5])
