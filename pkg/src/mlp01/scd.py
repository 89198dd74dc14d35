"""Stochastic coordinate descent for linear and one-hidden-layer 01-loss models.

Each epoch samples a class-balanced batch, searches a random subset of
weight coordinates with +-step trials (re-fitting the matching threshold
exactly on the batch for every trial), and keeps the best trial only if it
strictly lowers the misclassification count on the full training set.

Thresholds are stored as biases: a unit fires (+1) when
``projection + bias >= 0``, so the sweep's cut point ``t`` maps to
``bias = -t``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import ConfigError, Dataset, stratified_batch
from .models import LinearParams, Mlp01Params, VoteEnsemble, sign

SENTINEL_GAP = 1.0


@dataclass(frozen=True)
class ScdConfig:
    hidden_nodes: int = 20
    batch_fraction: float = 0.75
    features_per_step: int = 128
    step_size: float = 0.17
    epochs: int = 1000
    votes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.hidden_nodes < 0:
            raise ConfigError("hidden_nodes must be >= 0")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigError("batch_fraction must be in (0, 1]")
        if self.features_per_step < 1:
            raise ConfigError("features_per_step must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.votes < 1:
            raise ConfigError("votes must be >= 1")


@dataclass
class ScdTrace:
    """Per-epoch record. `loss` is the full-data 01 loss after the epoch."""

    initial_loss: float = float("nan")
    loss: list = field(default_factory=list)
    accepted_output: list = field(default_factory=list)
    accepted_hidden: list = field(default_factory=list)
    node: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    @property
    def accepted(self) -> list[bool]:
        return [a or b for a, b in zip(self.accepted_output, self.accepted_hidden)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "accepted", "accepted_output", "accepted_hidden", "node"])
            w.writerow([0, repr(self.initial_loss), 0, 0, 0, -1])
            for i, (l, ao, ah, nd) in enumerate(
                zip(self.loss, self.accepted_output, self.accepted_hidden, self.node), start=1
            ):
                w.writerow([i, repr(l), int(ao or ah), int(ao), int(ah), nd])


# ---------------------------------------------------------------------------
# threshold sweep


def sweep_thresholds(P, err_on, err_off):
    """Exact best cut for every row of candidate projections.

    P is (m, n): m candidate projection vectors over the same n samples.
    err_on[i] / err_off[i] are 1 if sample i is misclassified when its unit
    fires (+1) / does not fire (-1); shape (n,) or (m, n).

    Cuts considered: one below the minimum (everything fires), the midpoint
    between each pair of consecutive distinct sorted values, one above the
    maximum (nothing fires). Returns (cuts, error counts), both length m;
    ties resolve to the lowest cut.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    m, n = P.shape
    order = np.argsort(P, axis=1, kind="stable")
    Ps = np.take_along_axis(P, order, axis=1)
    err_on = np.asarray(err_on, dtype=np.int64)
    err_off = np.asarray(err_off, dtype=np.int64)
    if err_on.ndim == 1:
        eon, eoff = err_on[order], err_off[order]
    else:
        eon = np.take_along_axis(err_on, order, axis=1)
        eoff = np.take_along_axis(err_off, order, axis=1)
    losses = np.empty((m, n + 1), dtype=np.int64)
    losses[:, 0] = eon.sum(axis=1)
    losses[:, 1:] = losses[:, :1] + np.cumsum(eoff - eon, axis=1)
    # cutting after position i is only meaningful between distinct values
    losses[:, 1:n][Ps[:, :-1] == Ps[:, 1:]] = np.iinfo(np.int64).max
    best = np.argmin(losses, axis=1)
    rows = np.arange(m)
    cuts = np.empty(m)
    lo = best == 0
    hi = best == n
    mid = ~(lo | hi)
    cuts[lo] = Ps[lo, 0] - SENTINEL_GAP
    cuts[hi] = Ps[hi, -1] + SENTINEL_GAP
    b = best[mid]
    cuts[mid] = 0.5 * (Ps[rows[mid], b - 1] + Ps[rows[mid], b])
    return cuts, losses[rows, best]


def optimal_threshold(projections, labels):
    """Best cut t for predicting sign(p - t) against labels; returns (t, loss).

    One O(n log n) sort followed by a single cumulative error-count sweep.
    """
    labels = np.asarray(labels)
    p = np.asarray(projections, dtype=np.float64).reshape(1, -1)
    cuts, errs = sweep_thresholds(p, labels == -1, labels == 1)
    return float(cuts[0]), float(errs[0]) / p.shape[1]


# ---------------------------------------------------------------------------
# coordinate trials


def _best_coordinate_move(base, cols, eta, err_on, err_off):
    """Try base +- eta * cols[:, c] for every column c; return the best trial.

    Trials are ordered (c0 +eta, c0 -eta, c1 +eta, ...) so ties keep the
    first one found. Returns (column position, signed step, cut, error count).
    """
    cols = np.asarray(cols, dtype=np.float64)
    m = cols.shape[1]
    P = np.empty((2 * m, base.shape[0]))
    P[0::2] = base + eta * cols.T
    P[1::2] = base - eta * cols.T
    cuts, errs = sweep_thresholds(P, err_on, err_off)
    t = int(np.argmin(errs))
    return t // 2, (eta if t % 2 == 0 else -eta), float(cuts[t]), int(errs[t])


def _pick_coords(rng, size, count):
    return rng.choice(size, size=min(count, size), replace=False)


def coord_step_linear(p: LinearParams, batch: Dataset, cfg: ScdConfig, rng):
    """One coordinate search on a linear model; returns (candidate, batch loss)."""
    coords = _pick_coords(rng, p.d, cfg.features_per_step)
    y = batch.labels
    base = batch.features @ p.w
    c, delta, cut, errs = _best_coordinate_move(
        base, batch.features[:, coords], cfg.step_size, y == -1, y == 1
    )
    w = p.w.copy()
    w[coords[c]] += delta
    return LinearParams(w, -cut), errs / batch.n


def coord_step_output(p: Mlp01Params, batch: Dataset, cfg: ScdConfig, rng):
    """Coordinate search on the output weights w with w0 re-fitted per trial.

    Returns (candidate params, batch 01 loss of the candidate). A linear
    model has no hidden layer, so its "output" is the input weight vector.
    """
    if isinstance(p, LinearParams):
        return coord_step_linear(p, batch, cfg, rng)
    H = p.hidden(batch.features).astype(np.float64)
    coords = _pick_coords(rng, p.k, cfg.features_per_step)
    y = batch.labels
    c, delta, cut, errs = _best_coordinate_move(H @ p.w, H[:, coords], cfg.step_size, y == -1, y == 1)
    w = p.w.copy()
    w[coords[c]] += delta
    return Mlp01Params(p.W, p.W0, w, -cut), errs / batch.n


def hidden_flip_errors(H, w, w0, j, y):
    """Per-sample errors of the full network when hidden unit j is forced on / off."""
    other = H @ w - w[j] * H[:, j]
    err_on = sign(other + w[j] + w0) != y
    err_off = sign(other - w[j] + w0) != y
    return err_on, err_off


def coord_step_hidden(p: Mlp01Params, batch: Dataset, j: int, cfg: ScdConfig, rng):
    """Coordinate search on column W[:, j] with W0[j] re-fitted per trial.

    Each threshold crossing flips one sample's hidden activation j, which moves
    its output projection by +-2 w[j]; the sweep therefore scores the true
    network batch loss for every candidate threshold.
    """
    if not 0 <= j < p.k:
        raise IndexError(f"hidden node {j} out of range for k={p.k}")
    X, y = batch.features, batch.labels
    H = p.hidden(X).astype(np.float64)
    err_on, err_off = hidden_flip_errors(H, p.w, p.w0, j, y)
    coords = _pick_coords(rng, p.d, cfg.features_per_step)
    c, delta, cut, errs = _best_coordinate_move(X @ p.W[:, j], X[:, coords], cfg.step_size, err_on, err_off)
    W = p.W.copy()
    W0 = p.W0.copy()
    W[coords[c], j] += delta
    W0[j] = -cut
    return Mlp01Params(W, W0, p.w, p.w0), errs / batch.n


# ---------------------------------------------------------------------------
# initialization


def _oriented_threshold(proj, labels):
    """Best cut for `proj` or `-proj`, whichever scores lower; returns (orientation, cut).

    The sweep only predicts +1 above the cut, so a weight vector drawn pointing
    the wrong way can never beat the constant predictor, and +-step moves back
    through that plateau are never strictly better. Ties keep the draw as is.
    """
    cut, loss = optimal_threshold(proj, labels)
    cut_neg, loss_neg = optimal_threshold(-proj, labels)
    return (-1.0, cut_neg) if loss_neg < loss else (1.0, cut)


def init_linear(data: Dataset, rng) -> LinearParams:
    w = rng.standard_normal(data.d)
    s, cut = _oriented_threshold(data.features @ w, data.labels)
    return LinearParams(s * w, -cut)


def init_mlp01(data: Dataset, cfg: ScdConfig, rng) -> Mlp01Params:
    """N(0, 1) weights; hidden biases put each unit's cut at its median projection;
    the output weights take the better orientation of +-w and the output bias
    is the exact best threshold over the full training data."""
    k = cfg.hidden_nodes
    W = rng.standard_normal((data.d, k))
    w = rng.standard_normal(k)
    Q = data.features @ W
    W0 = -np.median(Q, axis=0)
    H = sign(Q + W0).astype(np.float64)
    s, cut = _oriented_threshold(H @ w, data.labels)
    return Mlp01Params(W, W0, s * w, -cut)


# ---------------------------------------------------------------------------
# training loop


class _LinearState:
    def __init__(self, data: Dataset, p: LinearParams):
        self.X, self.y = data.features, data.labels
        self.w, self.w0 = p.w.copy(), p.w0
        self.proj = self.X @ self.w
        self.errors = int(np.count_nonzero(sign(self.proj + self.w0) != self.y))

    def params(self):
        return LinearParams(self.w.copy(), self.w0)

    def output_step(self, idx, cfg, rng):
        coords = _pick_coords(rng, self.X.shape[1], cfg.features_per_step)
        yb = self.y[idx]
        c, delta, cut, _ = _best_coordinate_move(
            self.proj[idx], self.X[np.ix_(idx, coords)], cfg.step_size, yb == -1, yb == 1
        )
        f = coords[c]
        proj = self.proj + delta * self.X[:, f]
        errors = int(np.count_nonzero(sign(proj - cut) != self.y))
        if errors < self.errors:
            self.w[f] += delta
            self.w0, self.proj, self.errors = -cut, proj, errors
            return True
        return False


class _Mlp01State:
    def __init__(self, data: Dataset, p: Mlp01Params):
        self.X, self.y = data.features, data.labels
        self.W, self.W0, self.w, self.w0 = p.W.copy(), p.W0.copy(), p.w.copy(), p.w0
        self.Q = self.X @ self.W
        self.H = sign(self.Q + self.W0).astype(np.float64)
        self.out = self.H @ self.w
        self.errors = int(np.count_nonzero(sign(self.out + self.w0) != self.y))

    def params(self):
        return Mlp01Params(self.W.copy(), self.W0.copy(), self.w.copy(), self.w0)

    def output_step(self, idx, cfg, rng):
        k = self.W.shape[1]
        coords = _pick_coords(rng, k, cfg.features_per_step)
        Hb, yb = self.H[idx], self.y[idx]
        c, delta, cut, _ = _best_coordinate_move(
            self.out[idx], Hb[:, coords], cfg.step_size, yb == -1, yb == 1
        )
        j = coords[c]
        out = self.out + delta * self.H[:, j]
        errors = int(np.count_nonzero(sign(out - cut) != self.y))
        if errors < self.errors:
            self.w[j] += delta
            self.w0, self.out, self.errors = -cut, out, errors
            return True
        return False

    def hidden_step(self, j, idx, cfg, rng):
        Hb, yb = self.H[idx], self.y[idx]
        err_on, err_off = hidden_flip_errors(Hb, self.w, self.w0, j, yb)
        coords = _pick_coords(rng, self.X.shape[1], cfg.features_per_step)
        c, delta, cut, _ = _best_coordinate_move(
            self.Q[idx, j], self.X[np.ix_(idx, coords)], cfg.step_size, err_on, err_off
        )
        f = coords[c]
        q = self.Q[:, j] + delta * self.X[:, f]
        h = sign(q - cut).astype(np.float64)
        out = self.out + self.w[j] * (h - self.H[:, j])
        errors = int(np.count_nonzero(sign(out + self.w0) != self.y))
        if errors < self.errors:
            self.W[f, j] += delta
            self.W0[j] = -cut
            self.Q[:, j], self.H[:, j], self.out, self.errors = q, h, out, errors
            return True
        return False


def train_scd(data: Dataset, cfg: ScdConfig, callback: Callable | None = None):
    """Train one model; returns (params, trace).

    ``hidden_nodes == 0`` trains a linear model. `callback(epoch, state)` is
    invoked after every epoch; ``state.params()`` snapshots the current model.
    """
    for lab in (-1, 1):
        if not np.any(data.labels == lab):
            raise ConfigError(f"training data has no samples of class {lab:+d}")
    rng = np.random.default_rng(cfg.seed)
    linear = cfg.hidden_nodes == 0
    if linear:
        state = _LinearState(data, init_linear(data, rng))
    else:
        state = _Mlp01State(data, init_mlp01(data, cfg, rng))
    trace = ScdTrace(initial_loss=state.errors / data.n)
    for epoch in range(cfg.epochs):
        idx = stratified_batch(data, cfg.batch_fraction, rng)
        acc_out = state.output_step(idx, cfg, rng)
        if linear:
            node, acc_hid = -1, False
        else:
            node = int(rng.integers(cfg.hidden_nodes))
            acc_hid = state.hidden_step(node, idx, cfg, rng)
        trace.loss.append(state.errors / data.n)
        trace.accepted_output.append(acc_out)
        trace.accepted_hidden.append(acc_hid)
        trace.node.append(node)
        if callback is not None:
            callback(epoch + 1, state)
    return state.params(), trace


def _train_member(args):
    data, cfg = args
    return train_scd(data, cfg)


def member_configs(cfg: ScdConfig) -> list[ScdConfig]:
    fields = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    return [ScdConfig(**{**fields, "seed": cfg.seed + i, "votes": 1}) for i in range(cfg.votes)]


def train_scd_ensemble(data: Dataset, cfg: ScdConfig, workers: int = 1) -> VoteEnsemble:
    """Train `cfg.votes` members with seeds seed, seed+1, ...; members stay in seed order."""
    cfgs = member_configs(cfg)
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_member, [(data, c) for c in cfgs]))
    else:
        results = [train_scd(data, c) for c in cfgs]
    members = tuple(p for p, _ in results)
    return VoteEnsemble(members, {"seeds": [c.seed for c in cfgs], "traces": [t for _, t in results]})
