"""Model parameterizations and their hard-label forward passes.

Every forward function accepts a single vector of length d or an (n, d)
matrix and returns labels in {-1, +1} with the same leading shape.
Convention: sign(0) = +1 everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def sign(z):
    """Two-valued sign: +1 where z >= 0, else -1 (int8)."""
    z = np.asarray(z)
    out = np.where(z >= 0, 1, -1).astype(np.int8)
    return out if out.ndim else int(out)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_matrix(x, d):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"input has shape {x.shape}, model expects {d} features")
    return X, single


@dataclass(frozen=True, eq=False)
class LinearParams:
    w: np.ndarray
    w0: float

    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        object.__setattr__(self, "w0", float(self.w0))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def decision(self, x):
        X, single = _as_matrix(x, self.d)
        out = X @ self.w + self.w0
        return out[0] if single else out

    def predict(self, x):
        return sign(self.decision(x))


@dataclass(frozen=True, eq=False)
class Mlp01Params:
    """Sign-activation network: label = sign(w . sign(W^T x + W0) + w0)."""

    W: np.ndarray
    W0: np.ndarray
    w: np.ndarray
    w0: float

    kind = "mlp01"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        W0 = np.asarray(self.W0, dtype=np.float64).reshape(-1)
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or W.shape[1] != W0.shape[0] or w.shape[0] != W0.shape[0]:
            raise ValueError(f"inconsistent shapes W{W.shape} W0{W0.shape} w{w.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "W0", W0)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w0", float(self.w0))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def hidden(self, x):
        X, single = _as_matrix(x, self.d)
        H = sign(X @ self.W + self.W0)
        return H[0] if single else H

    def predict(self, x):
        return forward_mlp01(self, x)


def forward_mlp01(p: Mlp01Params, x):
    X, single = _as_matrix(x, p.d)
    H = sign(X @ p.W + p.W0)
    out = sign(H @ p.w + p.w0)
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Sigmoid network with one logistic output unit.

    weights[l] has shape (fan_in, fan_out); the last layer has fan_out == 1.
    """

    weights: tuple
    biases: tuple

    kind = "mlp"

    def __post_init__(self):
        Ws = tuple(np.asarray(W, dtype=np.float64) for W in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        _check_chain(Ws, bs)
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "biases", bs)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [W.shape[1] for W in self.weights[:-1]]

    def logit(self, x):
        X, single = _as_matrix(x, self.d)
        a = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = sigmoid(a @ W + b)
        z = (a @ self.weights[-1] + self.biases[-1])[:, 0]
        return z[0] if single else z

    def proba(self, x):
        return sigmoid(self.logit(x))

    def predict(self, x):
        return forward_mlp(self, x)[1]


def _check_chain(Ws, bs):
    if len(Ws) == 0 or len(Ws) != len(bs):
        raise ValueError("need matching, non-empty weight and bias lists")
    for i, (W, b) in enumerate(zip(Ws, bs)):
        if W.ndim != 2 or W.shape[1] != b.shape[0]:
            raise ValueError(f"layer {i}: weight {W.shape} vs bias {b.shape}")
        if i and Ws[i - 1].shape[1] != W.shape[0]:
            raise ValueError(f"layer {i}: fan-in {W.shape[0]} != previous width {Ws[i - 1].shape[1]}")
    if Ws[-1].shape[1] != 1:
        raise ValueError("output layer must have a single unit")


def forward_mlp(p: MlpParams, x):
    """Return (probability of +1, label); label is +1 iff probability >= 0.5."""
    prob = p.proba(x)
    label = np.where(np.asarray(prob) >= 0.5, 1, -1).astype(np.int8)
    if np.ndim(prob) == 0:
        return float(prob), int(label)
    return prob, label


@dataclass(frozen=True, eq=False)
class BnnParams:
    """Binarized network over latent real weights.

    Each layer computes (a . sign(W_latent)) / sqrt(fan_in) + b; hidden layers
    apply sign, the output pre-activation is thresholded at 0. The positive
    1/sqrt(fan_in) factor never changes a sign, it only keeps the training
    surrogate inside its non-zero support.
    """

    weights: tuple
    biases: tuple

    kind = "bnn"

    def __post_init__(self):
        Ws = tuple(np.asarray(W, dtype=np.float64) for W in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        _check_chain(Ws, bs)
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "biases", bs)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [W.shape[1] for W in self.weights[:-1]]

    def binary_weights(self):
        return [sign(W).astype(np.float64) for W in self.weights]

    def output(self, x):
        X, single = _as_matrix(x, self.d)
        a = X
        Bs = self.binary_weights()
        for i, (B, b) in enumerate(zip(Bs, self.biases)):
            z = (a @ B) / np.sqrt(B.shape[0]) + b
            a = sign(z).astype(np.float64) if i < len(Bs) - 1 else z
        z = a[:, 0]
        return z[0] if single else z

    def predict(self, x):
        return forward_bnn(self, x)


def forward_bnn(p: BnnParams, x):
    return sign(p.output(x))


def zero_one_loss(predict: Callable, data) -> float:
    """Misclassification fraction of `predict` on `data`."""
    if data.n == 0:
        raise ValueError("zero_one_loss on an empty dataset")
    pred = np.asarray(predict(data.features))
    return float(np.count_nonzero(pred != data.labels)) / data.n


@dataclass(frozen=True, eq=False)
class VoteEnsemble:
    members: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        kinds = {m.kind for m in members}
        if len(kinds) != 1:
            raise ValueError(f"mixed member kinds {sorted(kinds)}")
        if len({m.d for m in members}) != 1:
            raise ValueError("members disagree on input dimension")
        object.__setattr__(self, "members", members)

    @property
    def kind(self) -> str:
        return self.members[0].kind

    @property
    def d(self) -> int:
        return self.members[0].d

    def __len__(self):
        return len(self.members)

    def votes(self, x):
        """Sum of member labels; positive means a +1 majority."""
        return sum(np.asarray(m.predict(x), dtype=np.int64) for m in self.members)

    def predict(self, x):
        return ensemble_predict(self, x)


def ensemble_predict(e: VoteEnsemble, x):
    """Majority vote; ties go to +1."""
    return sign(e.votes(x))


def members_of(model) -> Sequence:
    return model.members if isinstance(model, VoteEnsemble) else (model,)
