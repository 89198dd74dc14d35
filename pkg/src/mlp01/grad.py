"""Gradient-trained baselines: sigmoid/cross-entropy MLP and a binarized network.

Both use mini-batch SGD with classic momentum (v <- mu v - lr g; theta <- theta + v)
and a single logistic output trained with mean binary cross-entropy.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ConfigError, Dataset
from .models import BnnParams, MlpParams, VoteEnsemble, sigmoid, sign

PROB_EPS = 1e-12


@dataclass(frozen=True)
class SgdConfig:
    hidden: tuple = (20,)
    batch_size: int = 200
    momentum: float = 0.9
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    votes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0 or self.votes < 1:
            raise ConfigError("epochs must be >= 0 and votes >= 1")


@dataclass(frozen=True)
class BnnConfig(SgdConfig):
    surrogate: str = "approx-sign"
    clip: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.surrogate not in ("approx-sign", "identity-ste"):
            raise ConfigError(f"unknown surrogate {self.surrogate!r}")
        if not self.clip > 0:
            raise ConfigError("clip bound must be > 0")


@dataclass
class Gradients:
    weights: list
    biases: list
    loss: float = float("nan")

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class TrainLog:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "accuracy"])
            for i, (l, a) in enumerate(zip(self.loss, self.accuracy), start=1):
                w.writerow([i, repr(l), repr(a)])


def _targets(y):
    return (np.asarray(y, dtype=np.float64) + 1.0) / 2.0


def bce(prob, t) -> float:
    p = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-t * np.log(p) - (1.0 - t) * np.log(1.0 - p)))


# ---------------------------------------------------------------------------
# MLP


def init_layers(d, hidden, rng):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    dims = [d, *hidden, 1]
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def init_mlp(d, cfg: SgdConfig, rng) -> MlpParams:
    Ws, bs = init_layers(d, cfg.hidden, rng)
    return MlpParams(tuple(Ws), tuple(bs))


def _mlp_forward(p: MlpParams, X):
    acts = [X]
    a = X
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        a = sigmoid(a @ W + b)
        acts.append(a)
    z = (a @ p.weights[-1] + p.biases[-1])[:, 0]
    return acts, z


def _mlp_backward(p: MlpParams, acts, dz):
    """Backprop dL/dz_out (n,) through the net; returns (dW list, db list, dX)."""
    delta = dz[:, None]
    gW, gb = [None] * len(p.weights), [None] * len(p.weights)
    for l in range(len(p.weights) - 1, -1, -1):
        gW[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        back = delta @ p.weights[l].T
        if l > 0:
            a = acts[l]
            delta = back * a * (1.0 - a)
    return gW, gb, back


def mlp_gradients(p: MlpParams, batch: Dataset) -> Gradients:
    """Exact gradients of the mean binary cross-entropy over `batch`."""
    acts, z = _mlp_forward(p, batch.features)
    prob = sigmoid(z)
    t = _targets(batch.labels)
    gW, gb, _ = _mlp_backward(p, acts, (prob - t) / batch.n)
    return Gradients(gW, gb, bce(prob, t))


def mlp_loss(p: MlpParams, batch: Dataset) -> float:
    return bce(p.proba(batch.features), _targets(batch.labels))


def mlp_input_gradient(p: MlpParams, X, y=None) -> np.ndarray:
    """Per-sample input gradients: of the output logit, or of each sample's
    cross-entropy against labels `y` when given."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    acts, z = _mlp_forward(p, X)
    dz = np.ones_like(z) if y is None else sigmoid(z) - _targets(np.broadcast_to(y, z.shape))
    _, _, dX = _mlp_backward(p, acts, dz)
    return dX


def _sgd(params_lists, grads_fn, data: Dataset, cfg, rng, after_step=None, callback=None):
    """Shared momentum-SGD loop over shuffled mini-batches."""
    Ws, bs = params_lists
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    for epoch in range(cfg.epochs):
        order = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            batch = data.subset(order[start : start + cfg.batch_size])
            g = grads_fn(Ws, bs, batch)
            for i in range(len(Ws)):
                vW[i] = cfg.momentum * vW[i] - cfg.learning_rate * g.weights[i]
                vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * g.biases[i]
                Ws[i] = Ws[i] + vW[i]
                bs[i] = bs[i] + vb[i]
            if after_step is not None:
                after_step(Ws, bs)
        if callback is not None:
            callback(epoch + 1, Ws, bs)
    return Ws, bs


def train_mlp(data: Dataset, cfg: SgdConfig, init: MlpParams | None = None, log: TrainLog | None = None) -> MlpParams:
    """SGD with momentum; `init` continues from existing parameters."""
    _require_both_classes(data)
    rng = np.random.default_rng(cfg.seed)
    p0 = init if init is not None else init_mlp(data.d, cfg, rng)
    Ws, bs = list(p0.weights), list(p0.biases)

    def grads(Ws, bs, batch):
        return mlp_gradients(MlpParams(tuple(Ws), tuple(bs)), batch)

    def record(epoch, Ws, bs):
        p = MlpParams(tuple(Ws), tuple(bs))
        log.loss.append(mlp_loss(p, data))
        log.accuracy.append(float(np.mean(p.predict(data.features) == data.labels)))

    Ws, bs = _sgd((Ws, bs), grads, data, cfg, rng, callback=record if log is not None else None)
    return MlpParams(tuple(Ws), tuple(bs))


def _require_both_classes(data: Dataset):
    for lab in (-1, 1):
        if not np.any(data.labels == lab):
            raise ConfigError(f"training data has no samples of class {lab:+d}")


# ---------------------------------------------------------------------------
# BNN


def approx_sign(z):
    """Piecewise-quadratic sign surrogate: z(2 - |z|) on [-1, 1], sign(z) outside."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.abs(z) <= 1.0, z * (2.0 - np.abs(z)), np.where(z >= 0, 1.0, -1.0))


def approx_sign_grad(z):
    """Triangular derivative: 2 + 2z on [-1, 0), 2 - 2z on [0, 1], 0 elsewhere."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.abs(z) <= 1.0, 2.0 - 2.0 * np.abs(z), 0.0)


def hard_tanh(z):
    return np.clip(z, -1.0, 1.0)


def ste_gate(z):
    return (np.abs(z) <= 1.0).astype(np.float64)


_ACTIVATION_GRAD = {"approx-sign": approx_sign_grad, "identity-ste": ste_gate}
_ACTIVATION_SMOOTH = {"approx-sign": approx_sign, "identity-ste": hard_tanh}


@dataclass
class BnnCache:
    activations: list  # inputs to each layer; activations[0] is x
    preacts: list  # z per layer, output last
    qweights: list  # weights as used in the forward pass


def bnn_forward_train(p: BnnParams, X, mode: str = "binary", surrogate: str = "approx-sign") -> BnnCache:
    """Forward pass keeping what backward needs.

    mode="binary" is the real network (sign weights, sign activations);
    mode="surrogate" swaps both for their smooth stand-ins, giving the
    function whose exact gradient the straight-through backward computes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if mode == "binary":
        qw = [sign(W).astype(np.float64) for W in p.weights]
        act = lambda z: sign(z).astype(np.float64)  # noqa: E731
    elif mode == "surrogate":
        qw = [hard_tanh(W) for W in p.weights]
        act = _ACTIVATION_SMOOTH[surrogate]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    acts, zs = [X], []
    a = X
    for i, (B, b) in enumerate(zip(qw, p.biases)):
        z = (a @ B) / np.sqrt(B.shape[0]) + b
        zs.append(z)
        if i < len(qw) - 1:
            a = act(z)
            acts.append(a)
    return BnnCache(acts, zs, qw)


def _bnn_backward(p: BnnParams, cache: BnnCache, dz_out, surrogate):
    act_grad = _ACTIVATION_GRAD[surrogate]
    L = len(p.weights)
    gW, gb = [None] * L, [None] * L
    delta = dz_out[:, None]
    for l in range(L - 1, -1, -1):
        scale = 1.0 / np.sqrt(p.weights[l].shape[0])
        gQ = scale * (cache.activations[l].T @ delta)
        gW[l] = gQ * ste_gate(p.weights[l])
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = scale * (delta @ cache.qweights[l].T) * act_grad(cache.preacts[l - 1])
    return gW, gb


def bnn_loss(p: BnnParams, batch: Dataset, mode: str = "binary", surrogate: str = "approx-sign") -> float:
    cache = bnn_forward_train(p, batch.features, mode, surrogate)
    return bce(sigmoid(cache.preacts[-1][:, 0]), _targets(batch.labels))


def bnn_gradients(p: BnnParams, batch: Dataset, cfg: BnnConfig | None = None, mode: str = "binary") -> Gradients:
    """Straight-through gradients w.r.t. latent weights and real biases.

    Activation derivatives use the configured surrogate; weight binarization
    passes gradient only where |latent| <= 1.
    """
    surrogate = cfg.surrogate if cfg is not None else "approx-sign"
    cache = bnn_forward_train(p, batch.features, mode, surrogate)
    prob = sigmoid(cache.preacts[-1][:, 0])
    t = _targets(batch.labels)
    gW, gb = _bnn_backward(p, cache, (prob - t) / batch.n, surrogate)
    return Gradients(gW, gb, bce(prob, t))


def init_bnn(d, cfg: SgdConfig, rng) -> BnnParams:
    Ws, bs = init_layers(d, cfg.hidden, rng)
    return BnnParams(tuple(Ws), tuple(bs))


def train_bnn(data: Dataset, cfg: BnnConfig, log: TrainLog | None = None) -> BnnParams:
    _require_both_classes(data)
    rng = np.random.default_rng(cfg.seed)
    p0 = init_bnn(data.d, cfg, rng)
    Ws, bs = list(p0.weights), list(p0.biases)

    def grads(Ws, bs, batch):
        return bnn_gradients(BnnParams(tuple(Ws), tuple(bs)), batch, cfg)

    def clip(Ws, bs):
        for i in range(len(Ws)):
            Ws[i] = np.clip(Ws[i], -cfg.clip, cfg.clip)

    def record(epoch, Ws, bs):
        p = BnnParams(tuple(Ws), tuple(bs))
        log.loss.append(bnn_loss(p, data, surrogate=cfg.surrogate))
        log.accuracy.append(float(np.mean(p.predict(data.features) == data.labels)))

    Ws, bs = _sgd((Ws, bs), grads, data, cfg, rng, after_step=clip, callback=record if log is not None else None)
    return BnnParams(tuple(Ws), tuple(bs))


# ---------------------------------------------------------------------------
# ensembles


def _train_one(args):
    kind, data, cfg = args
    return train_mlp(data, cfg) if kind == "mlp" else train_bnn(data, cfg)


def train_grad_ensemble(data: Dataset, cfg: SgdConfig, kind: str, workers: int = 1) -> VoteEnsemble:
    """`cfg.votes` members differing only by seed (seed, seed+1, ...)."""
    if kind not in ("mlp", "bnn"):
        raise ConfigError(f"unknown gradient model kind {kind!r}")
    if kind == "bnn" and not isinstance(cfg, BnnConfig):
        raise ConfigError("bnn ensembles need a BnnConfig")
    cfgs = [replace(cfg, seed=cfg.seed + i, votes=1) for i in range(cfg.votes)]
    jobs = [(kind, data, c) for c in cfgs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_train_one, jobs))
    else:
        members = [_train_one(j) for j in jobs]
    return VoteEnsemble(tuple(members), {"seeds": [c.seed for c in cfgs]})

