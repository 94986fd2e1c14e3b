import numpy as np
import pytest

from eigenavatar import synth
from eigenavatar.mesh import part_frames


@pytest.fixture(scope="module")
def seq():
    return synth.generate(synth.SynthConfig(seed=2, n_frames=5, image_size=32))


def test_generation_is_deterministic(seq):
    again = synth.generate(synth.SynthConfig(seed=2, n_frames=5, image_size=32))
    np.testing.assert_array_equal(again.clothed, seq.clothed)
    np.testing.assert_array_equal(again.image(3, 1), seq.image(3, 1))
    other = synth.generate(synth.SynthConfig(seed=3, n_frames=5, image_size=32))
    assert not np.array_equal(other.clothed, seq.clothed)


def test_clothing_is_the_rotated_local_field(seq):
    labels = seq.model.template.part_of_vertex
    for f in range(seq.n_frames):
        H = part_frames(seq.model, seq.pose(f))
        R = np.stack([h.rotation for h in H])
        q = np.einsum("vab,vb->va", R[labels], seq.clothed[f] - seq.naked[f])
        np.testing.assert_allclose(q, seq.local[f], atol=1e-12)


def test_zero_amplitude_gives_the_naked_body():
    s = synth.generate(synth.SynthConfig(n_frames=3, image_size=16, deform_amplitude=0.0))
    np.testing.assert_allclose(s.clothed, s.naked, atol=1e-15)


def test_target_noise_has_the_requested_scale():
    cfg = synth.SynthConfig(n_frames=2, image_size=16, target_noise=0.01, target_density=3)
    noisy = synth.generate(cfg)
    clean = synth.generate(synth.SynthConfig(n_frames=2, image_size=16, target_density=3))
    d = noisy.target_cloud(1) - clean.target_cloud(1)
    sigma = 0.01 * noisy.model.template.bbox_diagonal()
    assert abs(d.std() / sigma - 1.0) < 0.05
    np.testing.assert_array_equal(noisy.target_cloud(1), noisy.target_cloud(1))
    assert isinstance(noisy.target(0), np.ndarray)
    assert clean.target(0).n_vertices == clean.model.template.n_vertices


def test_holdout_sets_are_disjoint_and_placed():
    interp, extra = synth.holdout_frames(500)
    np.testing.assert_array_equal(extra, np.arange(220, 321))
    assert len(interp) > 0 and not set(interp) & set(extra)
    assert np.all((interp < 217) | (interp > 323))
    short_i, short_e = synth.holdout_frames(100)
    assert short_e.size == 0 and short_i.max() < 100


def test_images_show_the_body(seq):
    img = seq.image(0, 0)
    assert img.shape == (32, 32, 3) and img.dtype == np.uint8
    assert (img.sum(-1) > 0).mean() > 0.05


def test_config_round_trip():
    cfg = synth.SynthConfig(seed=4, shape=(0.1, 0.2, 0.0, 0.0))
    assert synth.SynthConfig.from_dict(cfg.to_dict()) == cfg
