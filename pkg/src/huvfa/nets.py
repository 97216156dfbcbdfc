"""One-hidden-layer regressors that map stream features to embeddings."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .env import N_ACTIONS, GridPos
from .tabular import N_OPTIONS

COORD_SCALE = 12.0


def encode_positions(positions) -> np.ndarray:
    """``(x / 12, y / 12)`` per cell; used for both states and goals."""
    p = np.asarray([tuple(q) for q in positions], dtype=float).reshape(-1, 2)
    return p / COORD_SCALE


def one_hot(indices, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"index out of range for one-hot of width {n}")
    out = np.zeros((idx.size, n))
    out[np.arange(idx.size), idx] = 1.0
    return out


@dataclass(frozen=True)
class FeatureCodec:
    n_options: int = N_OPTIONS
    n_actions: int = N_ACTIONS
    version: int = 1

    def state(self, positions) -> np.ndarray:
        return encode_positions(positions)

    def goal(self, positions) -> np.ndarray:
        return encode_positions(positions)

    def option(self, options) -> np.ndarray:
        return one_hot(options, self.n_options)

    def action(self, actions) -> np.ndarray:
        return one_hot(actions, self.n_actions)

    def encode(self, stream: str, keys) -> np.ndarray:
        """Features for a stream given by name.

        Joint streams are named with ``+``, e.g. ``"state+option"``; their
        keys are tuples and the parts are concatenated in order.
        """
        parts = stream.split("+")
        if len(parts) == 1:
            return getattr(self, stream)(keys)
        cols = list(zip(*keys)) if len(keys) else [[] for _ in parts]
        blocks = []
        for part, col in zip(parts, cols):
            if part in ("state", "goal"):
                col = [GridPos(*c) for c in col]
            blocks.append(getattr(self, part)(col))
        return np.hstack(blocks)

    def width(self, stream: str) -> int:
        sizes = {"state": 2, "goal": 2, "option": self.n_options, "action": self.n_actions}
        return sum(sizes[p] for p in stream.split("+"))


@dataclass
class TrainConfig:
    lr: float = 0.05
    batch_state_goal: int = 16
    batch_option_action: int = 2
    epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_state_goal < 1 or self.batch_option_action < 1:
            raise ValueError("batch sizes must be >= 1")


class StreamNet(RegressorMixin, BaseEstimator):
    """Linear -> ReLU -> linear regressor trained by minibatch SGD on MSE.

    Parameters
    ----------
    hidden : int
        Width of the hidden layer.
    lr : float
        SGD step size.
    batch_size : int
        Minibatch size; the last batch of an epoch may be smaller.
    epochs : int
        Passes over the shuffled training set.
    random_state : int
        Seed for initialisation and shuffling.
    """

    def __init__(self, hidden=128, lr=0.05, batch_size=16, epochs=2000, random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def initialize(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        """Draw fresh weights uniform in ``+-1/sqrt(fan_in)``."""
        rng = np.random.default_rng(self.random_state) if rng is None else rng
        self.coefs_, self.intercepts_ = [], []
        for fan_in, fan_out in ((n_in, self.hidden), (self.hidden, n_out)):
            bound = 1.0 / np.sqrt(fan_in)
            self.coefs_.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.intercepts_.append(rng.uniform(-bound, bound, fan_out))
        self.n_features_in_ = n_in
        self.n_outputs_ = n_out
        return self

    def fit(self, X, y):
        X = check_array(X)
        Y = np.asarray(y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y):
            raise ValueError("one target row per input row is required")
        rng = np.random.default_rng(self.random_state)
        self.initialize(X.shape[1], Y.shape[1], rng)
        self.loss_curve_ = sgd(self, X, Y, self.lr, self.batch_size, self.epochs, rng)
        return self

    def predict(self, X):
        check_is_fitted(self, "coefs_")
        return forward(self, check_array(X))

    def n_parameters(self) -> int:
        return sum(w.size for w in self.coefs_) + sum(b.size for b in self.intercepts_)


def forward(net: StreamNet, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != net.coefs_[0].shape[0]:
        raise ValueError(f"expected {net.coefs_[0].shape[0]} features, got {X.shape[1]}")
    H = np.maximum(X @ net.coefs_[0] + net.intercepts_[0], 0.0)
    out = H @ net.coefs_[1] + net.intercepts_[1]
    return out[0] if single else out


def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(net: StreamNet, features, target):
    """Loss and gradients of the batch MSE with respect to every parameter.

    Returns ``(loss, grads)`` with ``grads = [dW1, db1, dW2, db2]``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    T = np.asarray(target, dtype=float).reshape(X.shape[0], -1)
    W1, W2 = net.coefs_
    b1, b2 = net.intercepts_
    Z = X @ W1 + b1
    H = np.maximum(Z, 0.0)
    out = H @ W2 + b2
    diff = out - T
    loss = float(np.mean(diff ** 2))
    return loss, _backprop(W2, X, Z, H, 2.0 * diff / diff.size)


def _backprop(W2, X, Z, H, d_out):
    dW2 = H.T @ d_out
    db2 = d_out.sum(axis=0)
    dZ = (d_out @ W2.T) * (Z > 0)
    dW1 = X.T @ dZ
    db1 = dZ.sum(axis=0)
    return [dW1, db1, dW2, db2]


def vjp(net: StreamNet, features, d_out):
    """Parameter gradients of ``sum(d_out * forward(net, features))``."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Z = X @ net.coefs_[0] + net.intercepts_[0]
    H = np.maximum(Z, 0.0)
    return _backprop(net.coefs_[1], X, Z, H, np.asarray(d_out, dtype=float).reshape(len(X), -1))


def sgd(net: StreamNet, X, Y, lr: float, batch_size: int, epochs: int,
        rng: np.random.Generator) -> list[float]:
    """Shuffled minibatch SGD in place; returns the MSE over the set per epoch.

    Steps follow the per-sample squared error summed over embedding
    components (averaged over the batch), i.e. ``n_outputs`` times the
    gradient of :func:`mse_loss`, so the step size does not shrink with
    the embedding rank.
    """
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    step = lr * Y.shape[1]
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            loss, (dW1, db1, dW2, db2) = backward(net, X[idx], Y[idx])
            net.coefs_[0] -= step * dW1
            net.intercepts_[0] -= step * db1
            net.coefs_[1] -= step * dW2
            net.intercepts_[1] -= step * db2
            total += loss * len(idx)
        curve.append(total / n)
    return curve


def train_stream(net: StreamNet, inputs, target_rows, cfg: TrainConfig | None = None,
                 rng: np.random.Generator | None = None):
    """Fit ``net`` to map ``inputs`` onto ``target_rows``; returns ``(net, losses)``."""
    if cfg is not None:
        net.set_params(lr=cfg.lr, epochs=cfg.epochs)
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(target_rows, dtype=float)
    if len(X) == 0:
        raise ValueError("empty training set")
    if rng is None:
        net.fit(X, Y)
    else:
        net.initialize(X.shape[1], Y.shape[1], rng)
        net.loss_curve_ = sgd(net, X, Y, net.lr, net.batch_size, net.epochs, rng)
    return net, net.loss_curve_


# weight file: magic b"SNWB" | version u32 | n_in u32 | hidden u32 | n_out u32 | seed i64
#   | W1 (n_in x hidden) | b1 | W2 (hidden x n_out) | b2, row-major little-endian float64
_NET_MAGIC = b"SNWB"
_NET_HEAD = struct.Struct("<4sIIIIq")


def save_weights(path, net: StreamNet) -> None:
    n_in, hidden = net.coefs_[0].shape
    n_out = net.coefs_[1].shape[1]
    seed = net.random_state if isinstance(net.random_state, (int, np.integer)) else -1
    with open(path, "wb") as f:
        f.write(_NET_HEAD.pack(_NET_MAGIC, 1, n_in, hidden, n_out, int(seed)))
        for arr in (net.coefs_[0], net.intercepts_[0], net.coefs_[1], net.intercepts_[1]):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> StreamNet:
    raw = Path(path).read_bytes()
    magic, version, n_in, hidden, n_out, seed = _NET_HEAD.unpack_from(raw)
    if magic != _NET_MAGIC or version != 1:
        raise ValueError(f"{path}: not a weight file")
    data = np.frombuffer(raw, dtype="<f8", offset=_NET_HEAD.size)
    sizes = [n_in * hidden, hidden, hidden * n_out, n_out]
    if data.size != sum(sizes):
        raise ValueError(f"{path}: truncated payload")
    parts = np.split(data, np.cumsum(sizes)[:-1])
    net = StreamNet(hidden=hidden, random_state=seed if seed >= 0 else None)
    net.coefs_ = [parts[0].reshape(n_in, hidden).copy(), parts[2].reshape(hidden, n_out).copy()]
    net.intercepts_ = [parts[1].copy(), parts[3].copy()]
    net.n_features_in_, net.n_outputs_ = n_in, n_out
    return net
