"""Two-layer tanh regressors from a joint rotation to subspace coefficients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParameterError, TrainingError
from .geometry import axis_angle_to_matrix


@dataclass(frozen=True, eq=False)
class Regressor:
    """c(r) = W2 tanh(W1 r + b1) + b2."""

    W1: np.ndarray  # (J, 9)
    b1: np.ndarray  # (J,)
    W2: np.ndarray  # (L, J)
    b2: np.ndarray  # (L,)

    def __post_init__(self):
        arrs = [np.array(a, dtype=float, copy=True) for a in (self.W1, self.b1, self.W2, self.b2)]
        W1, b1, W2, b2 = arrs
        if W1.ndim != 2 or b1.shape != (W1.shape[0],) or W2.ndim != 2:
            raise ParameterError("inconsistent regressor dimensions")
        if W2.shape[1] != W1.shape[0] or b2.shape != (W2.shape[0],):
            raise ParameterError("inconsistent regressor dimensions")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ParameterError("regressor parameters must be finite")
        for name, a in zip(("W1", "b1", "W2", "b2"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def n_inputs(self):
        return self.W1.shape[1]

    @property
    def n_outputs(self):
        return self.W2.shape[0]

    def params(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.params()])

    def with_flat(self, x) -> "Regressor":
        x = np.asarray(x, dtype=float)
        out, pos = [], 0
        for a in self.params():
            out.append(x[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        return Regressor(*out)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    iterations: int = 5000
    hidden: int = 20
    seed: int = 0
    # multiply the step by this after an accepted step; 1.0 keeps it fixed
    growth: float = 1.05
    init_scale: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ParameterError("weight decay must be non-negative")
        if self.iterations < 0 or self.hidden < 1:
            raise ParameterError("iterations >= 0 and hidden >= 1 required")


def rotation_feature(R) -> np.ndarray:
    """Row-major vectorisation of a 3x3 rotation (or a batch of them)."""
    R = np.asarray(R, dtype=float)
    return R.reshape(R.shape[:-2] + (9,))


def pose_features(rotations_aa) -> np.ndarray:
    """(…, 3) axis-angle -> (…, 9) regressor inputs."""
    return rotation_feature(axis_angle_to_matrix(rotations_aa))


def predict(reg: Regressor, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != reg.n_inputs:
        raise ParameterError(f"input must have {reg.n_inputs} entries, got {r.shape[-1]}")
    h = np.tanh(r @ reg.W1.T + reg.b1)
    return h @ reg.W2.T + reg.b2


def loss_and_gradients(reg: Regressor, X, Y, weight_decay=0.0, mask=None):
    """Mean squared error plus (weight_decay / 2)(|W1|^2 + |W2|^2).

    The error is averaged over all (sample, output) entries, or over the
    entries selected by ``mask`` when given. Biases are not decayed.
    Returns (loss, (dW1, db1, dW2, db2)).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = X @ reg.W1.T + reg.b1
    H = np.tanh(A)
    err = H @ reg.W2.T + reg.b2 - Y
    if mask is None:
        count = err.size
    else:
        err = err * mask
        count = max(float(np.sum(mask)), 1.0)
    loss = np.sum(err * err) / count
    loss += 0.5 * weight_decay * (np.sum(reg.W1 ** 2) + np.sum(reg.W2 ** 2))
    dOut = 2.0 * err / count
    dW2 = dOut.T @ H + weight_decay * reg.W2
    db2 = dOut.sum(0)
    dA = (dOut @ reg.W2) * (1.0 - H * H)
    dW1 = dA.T @ X + weight_decay * reg.W1
    db1 = dA.sum(0)
    return float(loss), (dW1, db1, dW2, db2)


def init_regressor(n_in, hidden, n_out, seed=0, scale=0.1) -> Regressor:
    rng = np.random.default_rng(seed)
    return Regressor(
        rng.uniform(-scale, scale, (hidden, n_in)),
        rng.uniform(-scale, scale, hidden),
        rng.uniform(-scale, scale, (n_out, hidden)),
        rng.uniform(-scale, scale, n_out),
    )


@dataclass
class TrainResult:
    regressor: Regressor
    loss_trace: list = field(default_factory=list)
    learning_rate: float = 0.0


def train(X, Y, config: TrainConfig = TrainConfig(), mask=None) -> TrainResult:
    """Full-batch gradient descent with weight decay.

    A step that raises the loss is rejected and the learning rate halved;
    accepted steps grow it by ``config.growth``. With ``standardize`` the
    inputs are centred and scaled per entry, and the targets centred and
    scaled by one common factor, during training and
    the affine maps are folded back into the first and last layers, so the
    returned network takes raw rotation entries and predicts raw coefficients.
    Weight decay acts on the weights of the standardised problem.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) < 1 or len(X) != len(Y):
        raise ParameterError("need at least one (input, target) pair of matching count")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != Y.shape:
            raise ParameterError("mask must match the target shape")
        Y = np.where(mask > 0, Y, 0.0)
    if config.standardize:
        xm = X.mean(0)
        xs = X.std(0)
        xs = np.where(xs > 1e-8, xs, 1.0)
        w = np.ones_like(Y) if mask is None else mask
        n = np.maximum(w.sum(0), 1.0)
        mu = (Y * w).sum(0) / n
        # one scale for all outputs keeps their relative weight in the loss
        sd = np.sqrt(((Y - mu) ** 2 * w).sum() / max(w.sum(), 1.0))
        sd = np.full(Y.shape[1], sd if sd > 1e-12 else 1.0)
    else:
        xm, xs = np.zeros(X.shape[1]), np.ones(X.shape[1])
        mu = np.zeros(Y.shape[1])
        sd = np.ones(Y.shape[1])
    Xs = (X - xm) / xs
    Z = (Y - mu) / sd
    if mask is not None:
        Z = Z * mask
    reg = init_regressor(X.shape[1], config.hidden, Y.shape[1], config.seed, config.init_scale)
    lr = config.learning_rate
    loss, grads = loss_and_gradients(reg, Xs, Z, config.weight_decay, mask)
    trace = [loss]
    params = [np.array(p) for p in reg.params()]
    for _ in range(config.iterations):
        if not np.isfinite(loss):
            raise TrainingError("loss became non-finite", trace)
        while True:
            trial = Regressor(*[p - lr * g for p, g in zip(params, grads)]) \
                if all(np.all(np.isfinite(p - lr * g)) for p, g in zip(params, grads)) else None
            if trial is not None:
                new_loss, new_grads = loss_and_gradients(trial, Xs, Z, config.weight_decay, mask)
                if np.isfinite(new_loss) and new_loss <= loss:
                    break
            lr *= 0.5
            if lr < 1e-20:
                raise TrainingError("step size underflow without decreasing the loss", trace)
        params = [np.array(p) for p in trial.params()]
        loss, grads = new_loss, new_grads
        trace.append(loss)
        lr *= config.growth
    W1, b1, W2, b2 = params
    # fold both standardisations back so the network consumes raw inputs
    W1 = W1 / xs
    b1 = b1 - W1 @ xm
    out = Regressor(W1, b1, W2 * sd[:, None], b2 * sd + mu)
    return TrainResult(out, trace, lr)


def weight_norm(reg: Regressor) -> float:
    return float(np.sum(reg.W1 ** 2) + np.sum(reg.W2 ** 2))


@dataclass(frozen=True, eq=False)
class TextureHead:
    """Slice of a group regressor's outputs belonging to one triangle."""

    triangle: int
    start: int
    stop: int


@dataclass(frozen=True, eq=False)
class TextureGroup:
    """Regressor shared by the triangles of one part (or a single triangle)."""

    joint: int
    regressor: Regressor
    heads: tuple


@dataclass(frozen=True, eq=False)
class RegressorSet:
    deform: tuple  # Regressor per part (None when untrained)
    deform_joints: tuple
    texture: tuple = ()  # TextureGroup

    def texture_heads(self):
        out = {}
        for g, group in enumerate(self.texture):
            for h in group.heads:
                out[h.triangle] = (g, h)
        return out


def regress_frame(regressors: RegressorSet, pose_rotations):
    """Coefficients for one pose.

    ``pose_rotations`` is (J, 3) axis-angle. Returns (deformation coefficients
    per part, {triangle: texture coefficients}).
    """
    feats = pose_features(np.asarray(pose_rotations, dtype=float))
    deform = []
    for l, (reg, joint) in enumerate(zip(regressors.deform, regressors.deform_joints)):
        if reg is None:
            raise ConfigurationError(f"no deformation regressor for part {l}")
        deform.append(predict(reg, feats[joint]))
    texture = {}
    for group in regressors.texture:
        out = predict(group.regressor, feats[group.joint])
        for h in group.heads:
            texture[h.triangle] = out[h.start:h.stop]
    return deform, texture


def regress_sequence(regressors: RegressorSet, poses):
    """Deformation coefficients for many poses: list over parts of (F, L_l)."""
    feats = pose_features(np.asarray(poses, dtype=float))
    out = []
    for l, (reg, joint) in enumerate(zip(regressors.deform, regressors.deform_joints)):
        if reg is None:
            raise ConfigurationError(f"no deformation regressor for part {l}")
        out.append(predict(reg, feats[:, joint]))
    return out
