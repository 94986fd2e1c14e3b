import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigenavatar import regress
from eigenavatar.errors import ConfigurationError, ParameterError
from eigenavatar.geometry import axis_angle_to_matrix

from oracles import central_difference, relative_error


def _task(seed=0, n=60, L=4, noise=0.0):
    """Coefficients that depend smoothly on a joint rotation."""
    rng = np.random.default_rng(seed)
    aa = rng.normal(scale=0.6, size=(n, 3))
    X = regress.pose_features(aa)
    Y = np.stack([np.sin(aa[:, 0]) + aa[:, 1] ** 2, np.cos(aa[:, 2]), aa[:, 0] * aa[:, 1],
                  aa.sum(1)], axis=1)[:, :L]
    return X, Y + noise * rng.normal(size=Y.shape)


def test_features_are_row_major_rotation_entries():
    aa = np.array([0.3, -0.2, 0.5])
    np.testing.assert_array_equal(regress.pose_features(aa), axis_angle_to_matrix(aa).reshape(9))


def test_predict_formula():
    reg = regress.init_regressor(9, 5, 3, seed=1, scale=0.5)
    x = np.random.default_rng(0).normal(size=9)
    expected = reg.W2 @ np.tanh(reg.W1 @ x + reg.b1) + reg.b2
    np.testing.assert_allclose(regress.predict(reg, x), expected)
    with pytest.raises(ParameterError):
        regress.predict(reg, np.zeros(8))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.floats(0.0, 0.1), st.booleans(),
       st.integers(0, 2 ** 31 - 1))
def test_gradients_against_finite_differences(J, L, decay, masked, seed):
    rng = np.random.default_rng(seed)
    reg = regress.init_regressor(9, J, L, seed=seed % 1000, scale=0.8)
    X, Y = rng.normal(size=(7, 9)), rng.normal(size=(7, L))
    mask = (rng.random((7, L)) < 0.6).astype(float) if masked else None
    _, g = regress.loss_and_gradients(reg, X, Y, decay, mask)
    num = central_difference(lambda x: regress.loss_and_gradients(reg.with_flat(x), X, Y, decay,
                                                                   mask)[0], reg.flat())
    assert relative_error(np.concatenate([a.ravel() for a in g]), num) < 1e-6


def test_masked_entries_do_not_affect_loss():
    reg = regress.init_regressor(9, 4, 3)
    X = np.random.default_rng(0).normal(size=(5, 9))
    Y = np.random.default_rng(1).normal(size=(5, 3))
    mask = np.ones_like(Y)
    mask[:, 2] = 0.0
    Y2 = Y.copy()
    Y2[:, 2] = 1e6
    assert regress.loss_and_gradients(reg, X, Y, 0.0, mask)[0] == \
        regress.loss_and_gradients(reg, X, Y2, 0.0, mask)[0]


def test_training_fits_and_is_deterministic():
    X, Y = _task()
    cfg = regress.TrainConfig(iterations=800)
    a = regress.train(X, Y, cfg)
    b = regress.train(X, Y, cfg)
    assert a.regressor.flat().tobytes() == b.regressor.flat().tobytes()
    base = np.mean((Y - Y.mean(0)) ** 2)
    assert np.mean((regress.predict(a.regressor, X) - Y) ** 2) < 0.05 * base


def test_loss_non_increasing_at_small_learning_rate():
    X, Y = _task()
    res = regress.train(X, Y, regress.TrainConfig(learning_rate=1e-3, growth=1.0, iterations=300))
    assert np.all(np.diff(res.loss_trace) <= 1e-12)


def test_weight_decay_shrinks_weights():
    X, Y = _task(noise=0.3)
    kw = dict(iterations=1500, standardize=False)
    plain = regress.train(X, Y, regress.TrainConfig(weight_decay=0.0, **kw)).regressor
    decayed = regress.train(X, Y, regress.TrainConfig(weight_decay=1e-4, **kw)).regressor
    assert regress.weight_norm(decayed) < regress.weight_norm(plain)


def test_standardisation_is_folded_into_raw_weights():
    X, Y = _task()
    Y = 1e-3 * Y + 5.0  # tiny, offset targets like real coefficients
    res = regress.train(X, Y, regress.TrainConfig(iterations=600))
    pred = regress.predict(res.regressor, X)
    assert np.mean((pred - Y) ** 2) < 0.05 * np.mean((Y - Y.mean(0)) ** 2)


def test_train_input_checks():
    with pytest.raises(ParameterError):
        regress.train(np.zeros((3, 9)), np.zeros((4, 2)))
    with pytest.raises(ParameterError):
        regress.train(np.zeros((3, 9)), np.zeros((3, 2)), mask=np.ones((3, 3)))
    with pytest.raises(ParameterError):
        regress.TrainConfig(learning_rate=0.0)
    with pytest.raises(ParameterError):
        regress.TrainConfig(weight_decay=-1.0)


def test_regressor_rejects_inconsistent_shapes():
    with pytest.raises(ParameterError):
        regress.Regressor(np.zeros((4, 9)), np.zeros(3), np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(ParameterError):
        regress.Regressor(np.zeros((4, 9)), np.zeros(4), np.full((2, 4), np.nan), np.zeros(2))


def test_regress_frame_and_sequence_agree():
    regs = tuple(regress.init_regressor(9, 3, 2, seed=k) for k in range(2))
    group = regress.TextureGroup(1, regress.init_regressor(9, 3, 5, seed=9),
                                 (regress.TextureHead(7, 0, 2), regress.TextureHead(8, 2, 5)))
    rs = regress.RegressorSet(regs, (0, 1), (group,))
    poses = np.random.default_rng(0).normal(size=(4, 2, 3))
    seq = regress.regress_sequence(rs, poses)
    for f in range(4):
        d, t = regress.regress_frame(rs, poses[f])
        for l in range(2):
            np.testing.assert_allclose(d[l], seq[l][f], atol=1e-14)
        assert set(t) == {7, 8} and t[7].shape == (2,) and t[8].shape == (3,)
    assert set(rs.texture_heads()) == {7, 8}
    missing = regress.RegressorSet((None, regs[1]), (0, 1))
    with pytest.raises(ConfigurationError):
        regress.regress_frame(missing, poses[0])
